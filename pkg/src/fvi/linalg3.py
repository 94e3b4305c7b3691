"""Fixed-shape 3-vector and 3x3-matrix kernels.

Everything here is jitted so the integrator loops can call it without
leaving nopython mode. Vectors are ``float64[3]``, matrices ``float64[3, 3]``.
"""
import numpy as np
from numba import njit


class SingularMatrixError(ValueError):
    pass


@njit(cache=True)
def cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def norm(a):
    return np.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@njit(cache=True)
def max_abs(a):
    return max(abs(a[0]), abs(a[1]), abs(a[2]))


@njit(cache=True)
def hat(b):
    """Skew matrix with ``hat(b) @ w == cross(b, w)``."""
    m = np.zeros((3, 3))
    m[0, 1] = -b[2]
    m[0, 2] = b[1]
    m[1, 0] = b[2]
    m[1, 2] = -b[0]
    m[2, 0] = -b[1]
    m[2, 1] = b[0]
    return m


@njit(cache=True)
def matvec(m, v):
    out = np.empty(3)
    for i in range(3):
        out[i] = m[i, 0] * v[0] + m[i, 1] * v[1] + m[i, 2] * v[2]
    return out


@njit(cache=True)
def matTvec(m, v):
    """``m.T @ v`` without materialising the transpose."""
    out = np.empty(3)
    for j in range(3):
        out[j] = m[0, j] * v[0] + m[1, j] * v[1] + m[2, j] * v[2]
    return out


@njit(cache=True)
def matmul(a, b):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = a[i, 0] * b[0, j] + a[i, 1] * b[1, j] + a[i, 2] * b[2, j]
    return out


@njit(cache=True)
def inverse3(m):
    """Closed-form inverse via the adjugate.

    Raises SingularMatrixError when ``|det| <= 1e-300 * max|m_ij|**3``.
    """
    c00 = m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
    c01 = m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2]
    c02 = m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]
    det = m[0, 0] * c00 + m[0, 1] * c01 + m[0, 2] * c02
    big = 0.0
    for i in range(3):
        for j in range(3):
            big = max(big, abs(m[i, j]))
    if not abs(det) > 1e-300 * big * big * big:
        raise SingularMatrixError("matrix is singular to working precision")
    inv = np.empty((3, 3))
    inv[0, 0] = c00
    inv[1, 0] = c01
    inv[2, 0] = c02
    inv[0, 1] = m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2]
    inv[1, 1] = m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
    inv[2, 1] = m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1]
    inv[0, 2] = m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]
    inv[1, 2] = m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]
    inv[2, 2] = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return inv / det
