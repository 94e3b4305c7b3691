"""Invariants, velocity projections and the error metrics used in the experiments.

Energy, momentum and magnetic moment are evaluated at whatever state is
passed in; the integrators hand over midpoint pairs ``(x_{n+1/2}, v_{n+1/2})``.
"""
from dataclasses import dataclass
from math import ceil

import numpy as np

from .fields import total_field, total_potential

__all__ = [
    "MissingInvarianceError",
    "ZeroFieldError",
    "energy",
    "momentum",
    "magnetic_moment",
    "project_parallel",
    "ErrorRecord",
    "relative_errors",
    "ObservableSample",
    "observe",
    "DriftRecord",
    "decile_width",
    "drift_series",
    "drift_summary",
]

ABSOLUTE_SWITCH = 1e-12


class MissingInvarianceError(ValueError):
    """The model has no rotation generator ``S``, so ``M`` is undefined."""


class ZeroFieldError(ValueError):
    pass


def _vec(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def energy(model, x, v):
    """``|v|^2 / 2 + U(x)``."""
    v = _vec(v)
    return 0.5 * float(v @ v) + float(model.u(x))


def momentum(model, x, v):
    """``(v + A(x))^T S x`` with the full potential ``A``."""
    if model.s_matrix is None:
        raise MissingInvarianceError(f"model {model.label!r} has no momentum generator S")
    x = _vec(x)
    return float((_vec(v) + total_potential(model, x)) @ (model.s_matrix @ x))


def magnetic_moment(model, x, v):
    """``|v x B(x)|^2 / (2 eps |B(x)|^3)`` with the full field ``B``."""
    b = total_field(model, x)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        raise ZeroFieldError("magnetic moment is undefined where B = 0")
    vb = np.cross(_vec(v), b)
    return float(vb @ vb) / (2.0 * model.epsilon * nb**3)


def project_parallel(b0, v):
    """Split ``v`` into ``(b0 (b0 . v), v - b0 (b0 . v))`` for a unit ``b0``."""
    b0 = _vec(b0)
    v = _vec(v)
    par = b0 * (b0 @ v)
    return par, v - par


@dataclass(frozen=True)
class ErrorRecord:
    error_x: float
    error_v: float
    error_vpar: float
    error_vperp: float
    absolute: tuple  # names of the metrics whose denominator fell below 1e-12


def _ratio(num, den, name, flags):
    d = np.linalg.norm(den)
    if d < ABSOLUTE_SWITCH:
        flags.append(name)
        return float(np.linalg.norm(num))
    return float(np.linalg.norm(num) / d)


def relative_errors(x, v, x_exact, v_exact, b0):
    """Global errors ``|x_n - x(t_n)| / |x(t_n)|`` and the same for ``v``, ``v_par``, ``v_perp``.

    Denominators come from the exact state. Any denominator below 1e-12
    turns that metric into an absolute error, listed in ``absolute``.
    """
    x, v, x_exact, v_exact = map(_vec, (x, v, x_exact, v_exact))
    par, perp = project_parallel(b0, v)
    par_e, perp_e = project_parallel(b0, v_exact)
    flags = []
    out = (
        _ratio(x - x_exact, x_exact, "x", flags),
        _ratio(v - v_exact, v_exact, "v", flags),
        _ratio(par - par_e, par_e, "vpar", flags),
        _ratio(perp - perp_e, perp_e, "vperp", flags),
    )
    return ErrorRecord(*out, absolute=tuple(flags))


@dataclass(frozen=True)
class ObservableSample:
    t: float
    energy: float
    momentum: float | None
    magnetic_moment: float
    v_par: np.ndarray
    v_perp: np.ndarray


def observe(model, t, x, v):
    par, perp = project_parallel(model.b0, v)
    mom = momentum(model, x, v) if model.s_matrix is not None else None
    return ObservableSample(float(t), energy(model, x, v), mom, magnetic_moment(model, x, v), par, perp)


@dataclass(frozen=True)
class DriftRecord:
    """Max ``|drift|`` per quantity over the whole series and its first/last decile.

    Entries are ``None`` for a quantity that is absent (momentum without ``S``)
    and for an empty series.
    """

    n: int
    max_abs: dict
    first_decile: dict
    last_decile: dict

    def no_secular_growth(self, name, factor=2.0):
        """``last-decile max <= factor * first-decile max``."""
        return self.last_decile[name] <= factor * self.first_decile[name]


QUANTITIES = ("energy", "momentum", "magnetic_moment")


def decile_width(n):
    """Samples per decile window: ``ceil(n / 10)``, at least one."""
    return max(1, ceil(n / 10))


def _windows(values):
    a = np.abs(np.asarray(values, dtype=np.float64))
    if a.size == 0 or np.isnan(a).all():
        return None, None, None
    w = decile_width(a.size)
    return float(np.nanmax(a)), float(np.nanmax(a[:w])), float(np.nanmax(a[-w:]))


def _from_abs_drifts(columns, n):
    mx, first, last = {}, {}, {}
    for name, col in columns.items():
        mx[name], first[name], last[name] = _windows(col) if col is not None else (None, None, None)
    return DriftRecord(n, mx, first, last)


def drift_series(samples):
    """Drifts of every sample relative to the first one, with their maxima.

    ``samples`` is a sequence of :class:`ObservableSample`. The first sample
    is the reference, so its own drift (zero) is part of every window.
    """
    samples = list(samples)
    cols = {}
    for name in QUANTITIES:
        vals = [getattr(s, name) for s in samples]
        if not vals or vals[0] is None:
            cols[name] = None
            continue
        cols[name] = np.asarray(vals, dtype=np.float64) - vals[0]
    return _from_abs_drifts(cols, len(samples))


def drift_summary(traj):
    """Drift maxima of a :class:`~fvi.integrators.Trajectory`.

    Uses the per-block peaks, so thinned output still sees every step.
    """
    cols = {name: traj.peak[:, k] for k, name in enumerate(QUANTITIES)}
    if len(traj) and np.isnan(traj.peak[:, 1]).all():
        cols["momentum"] = None
    return _from_abs_drifts(cols, len(traj))
