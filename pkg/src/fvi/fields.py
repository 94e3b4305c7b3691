"""Electromagnetic field models ``B(x) = B0/eps + B1(x)`` and the built-in problems.

A :class:`FieldModel` carries the smooth part of the field as functions of
``(x, params)``. The integrators run in numba nopython mode, so the callables
must be numba-compilable; plain functions are passed through ``njit`` on
construction.

Vector potentials follow the convention ``A(x) = hat(B0) x / (2 eps) + A1(x)``,
i.e. ``-x cross B0 / (2 eps) + A1(x)``, so ``curl A = B``.
"""
from dataclasses import dataclass, field
from math import pi

import numpy as np
from numba import njit, types
from numba.extending import is_jitted

from .linalg3 import cross, hat, matvec

__all__ = [
    "FieldModel",
    "total_potential",
    "total_potential_jacobian",
    "total_field",
    "fd_jacobian",
    "fd_curl",
    "fd_gradient",
    "consistency_errors",
    "problem1",
    "problem2",
    "problem3",
    "problem4",
    "get_problem",
    "PROBLEMS",
]

# Field functions all take ``(x, params)`` with C-contiguous float64 vectors.
# Kernels receive them as typed first-class functions, which lets the
# kernels themselves be compiled once and cached on disk.
VEC = types.float64[::1]
MAT = types.float64[:, ::1]
VEC_SIG = VEC(VEC, VEC)
MAT_SIG = MAT(VEC, VEC)
SCALAR_SIG = types.float64(VEC, VEC)
VEC_FN = types.FunctionType(VEC_SIG)
MAT_FN = types.FunctionType(MAT_SIG)
SCALAR_FN = types.FunctionType(SCALAR_SIG)

ROTATION_E3 = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class FieldModel:
    """A charged-particle problem ``x'' = x' cross B(x) + F(x)``.

    The ``*_fn`` callables all take ``(x, params)``; ``a1_jac_fn`` returns the
    matrix ``J[i, j] = d_j A1_i``. ``s_matrix`` is the rotation generator of
    the momentum invariant, when the problem has one.
    """

    epsilon: float
    b0: np.ndarray
    b1_fn: object
    a1_fn: object
    a1_jac_fn: object
    u_fn: object
    f_fn: object
    params: np.ndarray = field(default_factory=lambda: np.zeros(1))
    s_matrix: np.ndarray = None
    label: str = "custom"
    x0: np.ndarray = None
    v0: np.ndarray = None
    t_end: float = 1.0
    nominal_epsilon: float = None

    def __post_init__(self):
        b0 = np.asarray(self.b0, dtype=np.float64)
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "params", np.ascontiguousarray(self.params, dtype=np.float64))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if abs(np.linalg.norm(b0) - 1.0) > 1e-12:
            raise ValueError(f"|b0| must be 1, got {np.linalg.norm(b0)!r}")
        if self.s_matrix is not None:
            s = np.asarray(self.s_matrix, dtype=np.float64)
            if np.max(np.abs(s + s.T)) > 1e-14:
                raise ValueError("s_matrix must be skew-symmetric")
            object.__setattr__(self, "s_matrix", s)
        for name in ("b1_fn", "a1_fn", "u_fn", "f_fn"):
            fn = getattr(self, name)
            if not is_jitted(fn):
                object.__setattr__(self, name, njit(fn))
        if self.a1_jac_fn is None:
            object.__setattr__(self, "a1_jac_fn", fd_jacobian(self.a1_fn))
        elif not is_jitted(self.a1_jac_fn):
            object.__setattr__(self, "a1_jac_fn", njit(self.a1_jac_fn))
        for name in ("x0", "v0"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=np.float64))
        if self.nominal_epsilon is None:
            object.__setattr__(self, "nominal_epsilon", float(self.epsilon))

    def b1(self, x):
        return self.b1_fn(np.ascontiguousarray(x, dtype=np.float64), self.params)

    def a1(self, x):
        return self.a1_fn(np.ascontiguousarray(x, dtype=np.float64), self.params)

    def a1_jac(self, x):
        return self.a1_jac_fn(np.ascontiguousarray(x, dtype=np.float64), self.params)

    def u(self, x):
        return self.u_fn(np.ascontiguousarray(x, dtype=np.float64), self.params)

    def f(self, x):
        return self.f_fn(np.ascontiguousarray(x, dtype=np.float64), self.params)


def total_potential(model, x):
    """``A(x) = hat(b0) x / (2 eps) + A1(x)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return matvec(hat(model.b0), x) / (2.0 * model.epsilon) + model.a1(x)


def total_potential_jacobian(model, x):
    return hat(model.b0) / (2.0 * model.epsilon) + model.a1_jac(x)


def total_field(model, x):
    return model.b0 / model.epsilon + model.b1(x)


def fd_jacobian(a1, step=1e-6):
    """Central-difference Jacobian of a jitted ``a1(x, params)``.

    Fallback for models without an analytic ``a1_jac``. The step is
    ``step * (1 + |x|)``, which costs roughly half the significant digits:
    expect ~1e-9 relative accuracy, not machine precision. That floor also
    caps how far the fixed-point residuals can drop.
    """

    @njit(MAT_SIG)
    def jac(x, params):
        hstep = step * (1.0 + np.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
        out = np.empty((3, 3))
        for j in range(3):
            xp = x.copy()
            xm = x.copy()
            xp[j] += hstep
            xm[j] -= hstep
            col = (a1(xp, params) - a1(xm, params)) / (2.0 * hstep)
            for i in range(3):
                out[i, j] = col[i]
        return out

    return jac


def _central_jacobian(fn, x, rel_step):
    x = np.asarray(x, dtype=np.float64)
    hstep = rel_step * (1.0 + np.linalg.norm(x))
    cols = []
    for j in range(3):
        dx = np.zeros(3)
        dx[j] = hstep
        cols.append((np.asarray(fn(x + dx)) - np.asarray(fn(x - dx))) / (2 * hstep))
    return np.column_stack(cols)


def fd_curl(fn, x, rel_step=1e-5):
    """Central-difference curl of a vector field ``fn(x)``."""
    j = _central_jacobian(fn, x, rel_step)
    return np.array([j[2, 1] - j[1, 2], j[0, 2] - j[2, 0], j[1, 0] - j[0, 1]])


def fd_gradient(fn, x, rel_step=1e-5):
    return _central_jacobian(lambda y: np.atleast_1d(fn(y)), x, rel_step)[0]


def consistency_errors(model, points):
    """Worst relative mismatch of ``curl A`` vs ``B`` and ``grad U`` vs ``-F``.

    Relative errors are taken against ``max(|B|, 1)`` and ``max(|F|, 1)``.
    Returns ``(curl_error, gradient_error)``.
    """
    curl_err = 0.0
    grad_err = 0.0
    for x in np.asarray(points, dtype=np.float64):
        b = total_field(model, x)
        c = fd_curl(lambda y: total_potential(model, y), x)
        curl_err = max(curl_err, np.linalg.norm(c - b) / max(np.linalg.norm(b), 1.0))
        f = model.f(x)
        g = fd_gradient(model.u, x)
        grad_err = max(grad_err, np.linalg.norm(g + f) / max(np.linalg.norm(f), 1.0))
    return curl_err, grad_err


# Problem 1: B = (0, 0, r), r = |(x1, x2)|, U = 1 / (100 r); split with B0 = e3.


@njit(VEC_SIG, cache=True)
def _p1_b1(x, p):
    r = np.sqrt(x[0] * x[0] + x[1] * x[1])
    return np.array([0.0, 0.0, r - 1.0])


@njit(VEC_SIG, cache=True)
def _p1_a1(x, p):
    r = np.sqrt(x[0] * x[0] + x[1] * x[1])
    k = r / 3.0 - 0.5
    return np.array([-x[1] * k, x[0] * k, 0.0])


@njit(MAT_SIG, cache=True)
def _p1_a1_jac(x, p):
    r = np.sqrt(x[0] * x[0] + x[1] * x[1])
    j = np.zeros((3, 3))
    if r > 0.0:
        xy = x[0] * x[1] / (3.0 * r)
        j[0, 0] = -xy
        j[0, 1] = -r / 3.0 - x[1] * x[1] / (3.0 * r) + 0.5
        j[1, 0] = r / 3.0 + x[0] * x[0] / (3.0 * r) - 0.5
        j[1, 1] = xy
    else:
        j[0, 1] = 0.5
        j[1, 0] = -0.5
    return j


@njit(SCALAR_SIG, cache=True)
def _p1_u(x, p):
    r2 = x[0] * x[0] + x[1] * x[1]
    if r2 < 1e-12:
        raise ValueError("problem 1 potential is singular on the x3-axis")
    return 1.0 / (100.0 * np.sqrt(r2))


@njit(VEC_SIG, cache=True)
def _p1_f(x, p):
    r2 = x[0] * x[0] + x[1] * x[1]
    if r2 < 1e-12:
        raise ValueError("problem 1 potential is singular on the x3-axis")
    c = 1.0 / (100.0 * r2 * np.sqrt(r2))
    return np.array([x[0] * c, x[1] * c, 0.0])


def problem1():
    """Moderate field with rotational invariance (momentum conserved)."""
    return FieldModel(
        epsilon=1.0,
        b0=E3,
        b1_fn=_p1_b1,
        a1_fn=_p1_a1,
        a1_jac_fn=_p1_a1_jac,
        u_fn=_p1_u,
        f_fn=_p1_f,
        s_matrix=ROTATION_E3,
        label="p1",
        x0=np.array([0.0, 1.0, 0.1]),
        v0=np.array([0.09, 0.05, 0.2]),
        t_end=1.0,
    )


# Problem 2: A = (x3^2 - x2^2 - x2, x3^2 - x1^2 + x1, x2^2 - x1^2) / 2; no invariance.


@njit(VEC_SIG, cache=True)
def _p2_b1(x, p):
    return np.array([x[1] - x[2], x[0] + x[2], x[1] - x[0]])


@njit(VEC_SIG, cache=True)
def _p2_a1(x, p):
    return 0.5 * np.array(
        [x[2] * x[2] - x[1] * x[1], x[2] * x[2] - x[0] * x[0], x[1] * x[1] - x[0] * x[0]]
    )


@njit(MAT_SIG, cache=True)
def _p2_a1_jac(x, p):
    return np.array([[0.0, -x[1], x[2]], [-x[0], 0.0, x[2]], [-x[0], x[1], 0.0]])


@njit(SCALAR_SIG, cache=True)
def _quadratic_u(x, p):
    return x[0] * x[0] + 2.0 * x[1] * x[1] + 3.0 * x[2] * x[2] - x[0]


@njit(VEC_SIG, cache=True)
def _quadratic_f(x, p):
    return np.array([1.0 - 2.0 * x[0], -4.0 * x[1], -6.0 * x[2]])


def problem2():
    """Moderate field whose potentials break the rotational invariance."""
    return FieldModel(
        epsilon=1.0,
        b0=E3,
        b1_fn=_p2_b1,
        a1_fn=_p2_a1,
        a1_jac_fn=_p2_a1_jac,
        u_fn=_quadratic_u,
        f_fn=_quadratic_f,
        s_matrix=ROTATION_E3,
        label="p2",
        x0=np.array([0.0, 0.1, 0.5]),
        v0=np.array([0.02, 0.1, 0.7]),
        t_end=1.0,
    )


# Problem 3: A1 = x1 x2 x3 (1, 1, 1), U = |x|^2 / 2.


@njit(VEC_SIG, cache=True)
def _p3_b1(x, p):
    return np.array([x[0] * (x[2] - x[1]), x[1] * (x[0] - x[2]), x[2] * (x[1] - x[0])])


@njit(VEC_SIG, cache=True)
def _p3_a1(x, p):
    s = x[0] * x[1] * x[2]
    return np.array([s, s, s])


@njit(MAT_SIG, cache=True)
def _p3_a1_jac(x, p):
    j = np.empty((3, 3))
    for i in range(3):
        j[i, 0] = x[1] * x[2]
        j[i, 1] = x[0] * x[2]
        j[i, 2] = x[0] * x[1]
    return j


@njit(SCALAR_SIG, cache=True)
def _p3_u(x, p):
    return 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])


@njit(VEC_SIG, cache=True)
def _p3_f(x, p):
    return -x.copy()


def problem3(epsilon):
    """Strong field ``e3/eps + curl(x1 x2 x3 (1,1,1))`` with a harmonic trap."""
    return FieldModel(
        epsilon=float(epsilon),
        b0=E3,
        b1_fn=_p3_b1,
        a1_fn=_p3_a1,
        a1_jac_fn=_p3_a1_jac,
        u_fn=_p3_u,
        f_fn=_p3_f,
        label="p3",
        x0=np.array([0.3, 0.2, -1.4]),
        v0=np.array([-0.7, 0.08, 0.2]),
        t_end=pi / 2,
    )


# Problem 4: maximal ordering B(x) = Bhat(eps x) / eps with
#   Bhat(y) = (1 + y2 / sqrt(1 + |y|^2), 1 - y1 / sqrt(1 + |y|^2), 0).
# Write B(x) = (1, 1, 0)/eps + G(x), G(x) = (x2, -x1, 0) / rho, rho = sqrt(1 + eps^2 |x|^2).
# G = curl (0, 0, g) with g = (rho - 1) / eps^2 = |x|^2 / (1 + rho), which stays O(|x|^2).
# Splitting at x0: B0/eps_eff = Bhat(eps x0)/eps and B1(x) = G(x) - G(x0), so
#   A1(x) = (0, 0, g(x)) - G(x0) cross x / 2.
# params = [eps, G(x0)_1, G(x0)_2, G(x0)_3].


@njit(cache=True)
def _p4_g_field(x, eps):
    rho = np.sqrt(1.0 + eps * eps * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
    return np.array([x[1] / rho, -x[0] / rho, 0.0])


@njit(VEC_SIG, cache=True)
def _p4_b1(x, p):
    return _p4_g_field(x, p[0]) - p[1:4]


@njit(VEC_SIG, cache=True)
def _p4_a1(x, p):
    eps = p[0]
    r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
    rho = np.sqrt(1.0 + eps * eps * r2)
    out = -0.5 * cross(p[1:4], x)
    out[2] += r2 / (1.0 + rho)
    return out


@njit(MAT_SIG, cache=True)
def _p4_a1_jac(x, p):
    eps = p[0]
    rho = np.sqrt(1.0 + eps * eps * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
    j = -0.5 * hat(p[1:4])
    for k in range(3):
        j[2, k] += x[k] / rho
    return j


def problem4(epsilon):
    """Maximal-ordering field, split around the initial position.

    ``model.epsilon`` is the effective value ``eps / |Bhat(eps x0)|`` that
    makes ``b0`` a unit vector; the requested value is kept in
    ``model.nominal_epsilon``.
    """
    eps = float(epsilon)
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    x0 = np.array([0.1, 0.03, -0.04])
    y = eps * x0
    s = np.sqrt(1.0 + y @ y)
    bhat0 = np.array([1.0 + y[1] / s, 1.0 - y[0] / s, 0.0])
    strength = np.linalg.norm(bhat0)
    g0 = np.array([x0[1] / s, -x0[0] / s, 0.0])
    return FieldModel(
        epsilon=eps / strength,
        b0=bhat0 / strength,
        b1_fn=_p4_b1,
        a1_fn=_p4_a1,
        a1_jac_fn=_p4_a1_jac,
        u_fn=_quadratic_u,
        f_fn=_quadratic_f,
        params=np.concatenate([[eps], g0]),
        label="p4",
        x0=x0,
        v0=np.array([-0.2, 0.01, 0.7]),
        t_end=pi / 2,
        nominal_epsilon=eps,
    )


PROBLEMS = {"p1": problem1, "p2": problem2, "p3": problem3, "p4": problem4}


def get_problem(label, epsilon=None):
    """Built-in problem by label; ``epsilon`` is ignored for p1/p2 (fixed at 1)."""
    try:
        factory = PROBLEMS[label]
    except KeyError:
        raise ValueError(f"unknown problem {label!r}; choose from {sorted(PROBLEMS)}") from None
    if label in ("p1", "p2"):
        return factory()
    if epsilon is None:
        raise ValueError(f"problem {label} needs an epsilon")
    return factory(epsilon)
