"""Filter functions and the per-step-size filter matrices.

For a unit field direction ``b0`` with skew matrix ``Bt = hat(b0)`` and
``theta = h / (2 eps)``::

    Psi = I + (1 - tanc(theta)) Bt^2
    Phi = I + (1 - 1/sinc(theta)) Bt^2
    M   = (I + (h / (2 eps)) Psi Bt)^-1
    P   = M (I - (h / (2 eps)) Psi Bt)

``P`` propagates the previous increment in the two-step recursion; for the
filtered scheme it is the Cayley transform of ``-theta Psi Bt``, which is the
rotation by ``-2 theta`` about ``b0``. ``M``, ``M Psi`` and ``P - I`` are built
from that closed form rather than by inversion.

``Bt^2 = b0 b0^T - I`` annihilates ``b0``, so both filters act as the
identity along the field and as scalars across it.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import cos, pi, sin, sinh, tan, tanh

import numpy as np
from numba import njit

from .linalg3 import hat, matmul

__all__ = [
    "ResonanceError",
    "tanc",
    "sinc",
    "tanch",
    "sinch_inv",
    "FilterPack",
    "build_filters",
    "Violation",
    "check_resonance",
]

SERIES_CUTOFF = 1e-4
POLE_GUARD = 1e-8


class ResonanceError(ValueError):
    """Step size puts ``h / (2 eps)`` on a pole of a filter function."""


@njit(cache=True)
def _tanc(z):
    if abs(z) < SERIES_CUTOFF:
        z2 = z * z
        return 1.0 + z2 / 3.0 + 2.0 * z2 * z2 / 15.0
    return tan(z) / z


@njit(cache=True)
def _sinc(z):
    if abs(z) < SERIES_CUTOFF:
        z2 = z * z
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return sin(z) / z


def _distance_to_grid(z, spacing, offset):
    """Distance from ``z`` to the nearest point of ``offset + k * spacing``."""
    k = round((z - offset) / spacing)
    return abs(z - offset - k * spacing)


def tanc(z):
    """``tan(z) / z``, equal to 1 at 0. Raises ResonanceError next to a pole."""
    if abs(z) >= SERIES_CUTOFF and _distance_to_grid(z, pi, pi / 2) < POLE_GUARD:
        raise ResonanceError(f"tanc({z!r}) is at a pole of tan (odd multiple of pi/2)")
    return _tanc(z)


def sinc(z):
    """``sin(z) / z``, equal to 1 at 0."""
    return _sinc(z)


def tanch(z):
    if abs(z) < SERIES_CUTOFF:
        z2 = z * z
        return 1.0 - z2 / 3.0 + 2.0 * z2 * z2 / 15.0
    return tanh(z) / z


def sinch_inv(z):
    """``z / sinh(z)``."""
    if abs(z) < SERIES_CUTOFF:
        z2 = z * z
        return 1.0 - z2 / 6.0 + 7.0 * z2 * z2 / 360.0
    return z / sinh(z)


@dataclass(frozen=True, eq=False)
class FilterPack:
    h: float
    epsilon: float
    b0: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    resolvent: np.ndarray
    gain: np.ndarray  # M Psi
    defect: np.ndarray  # propagator minus identity, -2 M theta Psi hat(b0)

    @property
    def theta(self):
        return self.h / (2.0 * self.epsilon)

    @property
    def propagator(self):
        """``M (I - theta Psi hat(b0))``, the linear part of the increment map."""
        return np.eye(3) + self.defect


def _filter_matrices(h, epsilon, b0):
    theta = h / (2.0 * epsilon)
    t = tanc(theta)
    if abs(theta) >= SERIES_CUTOFF and _distance_to_grid(theta, pi, 0.0) < POLE_GUARD:
        raise ResonanceError(f"h/(2 eps) = {theta!r} is a multiple of pi: 1/sinc is singular")
    bt = hat(b0)
    bt2 = matmul(bt, bt)
    eye = np.eye(3)
    psi = eye + (1.0 - t) * bt2
    phi = eye + (1.0 - 1.0 / _sinc(theta)) * bt2
    # On the plane orthogonal to b0, theta Psi hat(b0) acts as tan(theta) times a
    # quarter turn, so M and P = M (I - theta Psi hat(b0)) have closed forms; P is
    # the rotation by -2 theta about b0. These avoid inverting a matrix whose
    # entries grow like tan(theta), and b0^T hat(b0) evaluates to exactly zero,
    # so P - I never leaks into the field-aligned direction.
    s2 = sin(2.0 * theta)
    sq = sin(theta) ** 2
    resolvent = eye - 0.5 * s2 * bt + sq * bt2
    defect = 2.0 * sq * bt2 - s2 * bt
    # M Psi: sinc(2 theta) across the field and a -sin^2(theta)/theta quarter turn
    gain = eye + (1.0 - _sinc(2.0 * theta)) * bt2 - (sq / theta if theta != 0.0 else 0.0) * bt
    return psi, phi, resolvent, gain, defect


@lru_cache(maxsize=256)
def _cached_pack(h, epsilon, b0):
    b0 = np.array(b0)
    return FilterPack(h, epsilon, b0, *_filter_matrices(h, epsilon, b0))


def build_filters(h, epsilon, b0, *, allow_negative=False):
    """Precompute ``Psi``, ``Phi``, the resolvent ``M`` and ``P`` for one ``(h, eps, b0)``.

    Packs are memoised, so repeated calls with the same arguments are free
    and return the same arrays; treat them as read-only.
    ``allow_negative`` admits ``h < 0`` for running the scheme backwards.
    """
    h = float(h)
    epsilon = float(epsilon)
    if h == 0.0 or (h < 0.0 and not allow_negative):
        raise ValueError(f"step size must be positive, got {h}")
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    b0 = np.asarray(b0, dtype=np.float64)
    if abs(np.linalg.norm(b0) - 1.0) > 1e-12:
        raise ValueError("b0 must be a unit vector")
    return _cached_pack(h, epsilon, tuple(float(c) for c in b0))


@dataclass(frozen=True)
class Violation:
    k: int
    sin_value: float
    cos_value: float
    failed: str  # "sin", "cos" or "sin,cos"


def check_resonance(h, epsilon, n_max=5, c=0.1):
    """Non-resonance audit: every ``k <= n_max`` where ``|sin(k h/2eps)| < c``
    or ``|cos(k h/2eps)| < c``. An empty list means the step is admissible."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if not 0.0 < c < 1.0:
        raise ValueError("c must lie in (0, 1)")
    theta = h / (2.0 * epsilon)
    out = []
    for k in range(1, n_max + 1):
        s = sin(k * theta)
        co = cos(k * theta)
        failed = [name for name, val in (("sin", s), ("cos", co)) if abs(val) < c]
        if failed:
            out.append(Violation(k, s, co, ",".join(failed)))
    return out
