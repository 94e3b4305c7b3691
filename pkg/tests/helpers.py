"""Shared test models."""
import numpy as np
from numba import njit

from fvi.fields import FieldModel

E3 = np.array([0.0, 0.0, 1.0])


@njit(cache=True)
def zero_vec(x, p):
    return np.zeros(3)


@njit(cache=True)
def zero_mat(x, p):
    return np.zeros((3, 3))


@njit(cache=True)
def zero(x, p):
    return 0.0


@njit(cache=True)
def harmonic_u(x, p):
    return 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])


@njit(cache=True)
def harmonic_f(x, p):
    return -x.copy()


def free_model(eps=1.0, b0=E3, **kw):
    """B = b0/eps, no electric field."""
    return FieldModel(epsilon=eps, b0=np.asarray(b0, dtype=float), b1_fn=zero_vec, a1_fn=zero_vec,
                      a1_jac_fn=zero_mat, u_fn=zero, f_fn=zero_vec, **kw)


def harmonic_model(eps=1.0, b0=E3, **kw):
    """B = b0/eps with the trap F = -x."""
    return FieldModel(epsilon=eps, b0=np.asarray(b0, dtype=float), b1_fn=zero_vec, a1_fn=zero_vec,
                      a1_jac_fn=zero_mat, u_fn=harmonic_u, f_fn=harmonic_f, **kw)
