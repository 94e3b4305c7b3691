"""Time integrators for ``x'' = x' cross B(x) + F(x)``.

* FVI: the filtered two-step variational integrator. Each step solves an
  implicit equation for ``x_{n+1}`` by fixed-point iteration after moving
  the ``1/eps`` terms into the resolvent ``M``; velocities follow from
  ``(v_n + v_{n+1}) / 2 = Phi (x_{n+1} - x_n) / h``.
* Boris: the classical staggered leapfrog/rotation pusher, as a baseline.
* A high-order adaptive Runge-Kutta reference solver.

The per-step loops are numba kernels. They take the model's jitted field
functions as first-class arguments, so each problem is compiled once per
process and cached on disk.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import floor, nan

import numpy as np
from numba import njit, types
from scipy.integrate import solve_ivp

from .fields import MAT, MAT_FN, SCALAR_FN, VEC, VEC_FN
from .filters import build_filters
from .linalg3 import cross, dot, hat, matTvec, matvec, max_abs, norm

__all__ = [
    "NonConvergenceError",
    "ReferenceCostError",
    "SolverConfig",
    "TwoStepState",
    "StepDiagnostics",
    "TrajectoryRecord",
    "Trajectory",
    "fvi_startup",
    "fvi_step",
    "fvi_run",
    "startup_residual",
    "step_residual",
    "boris_init",
    "boris_step",
    "boris_run",
    "reference_solve",
    "ReferenceSolution",
]

# A stalled iteration only counts as converged once the increments are at
# roundoff level for the iterate's magnitude.
STAGNATION_ULPS = 64.0
STAGNATION_PATIENCE = 3
_EPS = np.finfo(np.float64).eps

_F8 = types.float64
_I8 = types.int64
_BOOL = types.boolean
_SOLVE_ARGS = (_F8, MAT, MAT, MAT, VEC_FN, MAT_FN, VEC_FN, VEC, _F8, _I8)
_RESIDUAL_ARGS = (VEC, VEC, VEC, _F8, _F8, MAT, MAT, VEC_FN, MAT_FN, VEC_FN, VEC)


class NonConvergenceError(RuntimeError):
    pass


class ReferenceCostError(ValueError):
    """The reference solve would need ~t_end/eps steps and is refused."""


@dataclass(frozen=True)
class SolverConfig:
    h: float
    t_end: float
    fp_tol: float = 1e-16
    fp_max_iter: int = 50
    strict: bool = False

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if self.fp_max_iter < 1:
            raise ValueError("fp_max_iter must be >= 1")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")

    @property
    def n_steps(self):
        """Whole steps that fit in ``[0, t_end]`` (tolerant to rounding in t_end/h)."""
        return int(floor(self.t_end / self.h * (1.0 + 1e-12) + 1e-9))


@dataclass(frozen=True)
class TwoStepState:
    x_prev: np.ndarray
    x_curr: np.ndarray
    v_curr: np.ndarray
    step_index: int


@dataclass(frozen=True)
class StepDiagnostics:
    iterations_used: int
    final_increment: float
    converged: bool


# ---------------------------------------------------------------- FVI kernels


# The resolvent form x_{n+1} = M(2x_n - x_{n-1} + h Psi (Bt x_{n-1} / 2eps + K)) is
# evaluated as an increment, using M (I + theta Psi Bt) = I with theta = h/2eps:
#   x_{n+1} = x_n + P (x_n - x_{n-1}) + h M Psi K,   P = M (I - theta Psi Bt).
# Same equation, but the O(theta |x|) terms that would cancel never get formed,
# so rounding stays at the level of the increment instead of theta * |x|.
# P d is applied as d + (P - I) d with P - I = -2 M theta Psi Bt, whose range is
# orthogonal to b0, so the field-aligned part of the increment is carried exactly.
# Positions are accumulated in double-double inside the run loop.
# Likewise the startup x_1 = M(x_0 + h Psi (p_0 + ...)) becomes x_0 + h M Psi (v_0 + A1(x_0) + ...).


@njit(cache=True)
def _fp_map(d, anchor, base, known, mpsi_h, half_h, a1, a1_jac, f, params):
    # base + h M Psi (known + A1'(m)^T d / 2 - A1(m) + h F(m) / 2), m = anchor + d / 2
    m = anchor + 0.5 * d
    g = known - a1(m, params) + half_h * f(m, params)
    g += 0.5 * matTvec(a1_jac(m, params), d)
    return base + matvec(mpsi_h, g)


@njit(cache=True)
def _fp_solve(anchor, base, known, mpsi_h, half_h, a1, a1_jac, f, params, tol, max_iter):
    # Seed: the map evaluated with the midpoint frozen at the anchor (d = 0).
    d0 = _fp_map(np.zeros(3), anchor, base, known, mpsi_h, half_h, a1, a1_jac, f, params)
    d = _fp_map(d0, anchor, base, known, mpsi_h, half_h, a1, a1_jac, f, params)
    iters = 1
    inc = max_abs(d - d0)
    best = inc
    stall = 0
    converged = inc <= tol
    # field evaluations at m = anchor + d/2 carry rounding relative to |anchor|
    floor = STAGNATION_ULPS * _EPS * (1.0 + max_abs(anchor))
    while not converged and iters < max_iter:
        d_new = _fp_map(d, anchor, base, known, mpsi_h, half_h, a1, a1_jac, f, params)
        iters += 1
        inc = max_abs(d_new - d)
        d = d_new
        if inc <= tol:
            converged = True
        elif inc < best:
            best = inc
            stall = 0
        else:
            stall += 1
            if stall >= STAGNATION_PATIENCE and best <= floor:
                converged = True
    return d, iters, inc, converged


@njit((VEC, VEC) + _SOLVE_ARGS, cache=True)
def _startup_kernel(x0, v0, h, mpsi_h, defect, phi, a1, a1_jac, f, params, tol, max_iter):
    known = v0 + a1(x0, params)
    d, iters, inc, conv = _fp_solve(x0, np.zeros(3), known, mpsi_h, 0.5 * h, a1, a1_jac, f, params, tol, max_iter)
    v1 = 2.0 * matvec(phi, d) / h - v0
    return d, v1, iters, inc, conv


@njit((VEC, VEC, VEC) + _SOLVE_ARGS, cache=True)
def _step_kernel(x_curr, d_prev, v_curr, h, mpsi_h, defect, phi, a1, a1_jac, f, params, tol, max_iter):
    """One step from ``x_n`` and the previous increment ``d_prev = x_n - x_{n-1}``.

    Returns the new increment ``x_{n+1} - x_n`` and ``v_{n+1}``.
    """
    xm = x_curr - 0.5 * d_prev
    known = a1(xm, params) + 0.5 * h * f(xm, params) + 0.5 * matTvec(a1_jac(xm, params), d_prev)
    base = d_prev + matvec(defect, d_prev)
    d, iters, inc, conv = _fp_solve(x_curr, base, known, mpsi_h, 0.5 * h, a1, a1_jac, f, params, tol, max_iter)
    v_next = 2.0 * matvec(phi, d) / h - v_curr
    return d, v_next, iters, inc, conv


@njit(cache=True)
def _accumulate(hi, lo, d):
    """Add ``d`` to the double-double position ``hi + lo`` in place.

    Long runs add a small increment to a growing position; plain summation
    would lose about half an ulp of ``|x|`` per step.
    """
    for i in range(3):
        s = hi[i] + d[i]
        bb = s - hi[i]
        err = (hi[i] - (s - bb)) + (d[i] - bb) + lo[i]
        hi[i] = s + err
        lo[i] = err - (hi[i] - s)


@njit(cache=True)
def _full_a(x, inv2eps, bt, a1, params):
    return inv2eps * matvec(bt, x) + a1(x, params)


@njit(cache=True)
def _full_a_jac_t(x, w, inv2eps, bt, a1_jac, params):
    # A'(x)^T w with A' = Bt/(2 eps) + A1'(x) and Bt^T = -Bt
    return -inv2eps * matvec(bt, w) + matTvec(a1_jac(x, params), w)


@njit(_RESIDUAL_ARGS, cache=True)
def _step_residual_kernel(x_prev, x_curr, x_next, h, inv2eps, bt, psi, a1, a1_jac, f, params):
    # Two-step equation with the full potential A, nothing moved into M.
    xp = 0.5 * (x_curr + x_next)
    xq = 0.5 * (x_curr + x_prev)
    t1 = 0.5 * h * _full_a_jac_t(xp, x_next - x_curr, inv2eps, bt, a1_jac, params)
    t2 = 0.5 * h * _full_a_jac_t(xq, x_curr - x_prev, inv2eps, bt, a1_jac, params)
    ap = h * _full_a(xp, inv2eps, bt, a1, params)
    aq = h * _full_a(xq, inv2eps, bt, a1, params)
    t4 = 0.5 * h * h * (f(xp, params) + f(xq, params))
    rhs = matvec(psi, t1 + t2 - (ap - aq) + t4)
    res = x_next - 2.0 * x_curr + x_prev - rhs
    psi_norm = 0.0
    for i in range(3):
        psi_norm = max(psi_norm, abs(psi[i, 0]) + abs(psi[i, 1]) + abs(psi[i, 2]))
    scale = max_abs(x_next) + 2.0 * max_abs(x_curr) + max_abs(x_prev)
    scale += psi_norm * (max_abs(t1) + max_abs(t2) + max_abs(ap) + max_abs(aq) + max_abs(t4))
    return max_abs(res), scale


@njit(_RESIDUAL_ARGS, cache=True)
def _startup_residual_kernel(x0, v0, x1, h, inv2eps, bt, psi, a1, a1_jac, f, params):
    p0 = v0 + _full_a(x0, inv2eps, bt, a1, params)
    xm = 0.5 * (x0 + x1)
    t1 = 0.5 * _full_a_jac_t(xm, x1 - x0, inv2eps, bt, a1_jac, params)
    am = _full_a(xm, inv2eps, bt, a1, params)
    t3 = 0.5 * h * f(xm, params)
    res = x1 - x0 - h * matvec(psi, p0 + t1 - am + t3)
    psi_norm = 0.0
    for i in range(3):
        psi_norm = max(psi_norm, abs(psi[i, 0]) + abs(psi[i, 1]) + abs(psi[i, 2]))
    scale = max_abs(x1) + max_abs(x0)
    scale += abs(h) * psi_norm * (max_abs(v0) + 2.0 * max_abs(_full_a(x0, inv2eps, bt, a1, params))
                                  + max_abs(t1) + max_abs(am) + max_abs(t3))
    return max_abs(res), scale


@njit(cache=True)
def _observe(x, v, u, a1, b1, params, b0, eps, s_matrix, has_s):
    """(H, M, I) at one state; M is NaN without a momentum generator."""
    energy = 0.5 * dot(v, v) + u(x, params)
    momentum = nan
    if has_s:
        a = 0.5 / eps * cross(b0, x) + a1(x, params)
        momentum = dot(v + a, matvec(s_matrix, x))
    b = b0 / eps + b1(x, params)
    vb = cross(v, b)
    nb = norm(b)
    moment = 0.5 / eps * dot(vb, vb) / (nb * nb * nb)
    return energy, momentum, moment


@njit(cache=True)
def _record(n, stride, h, xm, vm, xl, vl, obs, ref, it, conv, out_t, out_xm, out_vm, out_x, out_v,
            out_drift, out_peak, out_it, out_conv):
    k = n // stride
    if n % stride == 0:
        out_t[k] = (n + 0.5) * h
        out_xm[k] = xm
        out_vm[k] = vm
        out_x[k] = xl
        out_v[k] = vl
        out_it[k] = it
        out_conv[k] = conv
        for q in range(3):
            out_drift[k, q] = obs[q] - ref[q]
            out_peak[k, q] = abs(obs[q] - ref[q])
    else:
        out_it[k] = max(out_it[k], it)
        out_conv[k] = out_conv[k] and conv
        for q in range(3):
            d = abs(obs[q] - ref[q])
            if d > out_peak[k, q]:
                out_peak[k, q] = d


@njit((VEC_FN, MAT_FN, VEC_FN, SCALAR_FN, VEC_FN, VEC, VEC, _F8, MAT, _BOOL, MAT, MAT, MAT, MAT,
       _F8, VEC, VEC, _I8, _I8, _F8, _I8, _BOOL, _BOOL), cache=True)
def _fvi_kernel(a1, a1_jac, f, u, b1, params, b0, eps, s_matrix, has_s, psi, phi, gain, defect,
                h, x0, v0, n_steps, stride, tol, max_iter, strict, check_residual):
    n_samples = (n_steps + stride - 1) // stride
    out_t = np.empty(n_samples)
    out_xm = np.empty((n_samples, 3))
    out_vm = np.empty((n_samples, 3))
    out_x = np.empty((n_samples, 3))
    out_v = np.empty((n_samples, 3))
    out_drift = np.empty((n_samples, 3))
    out_peak = np.empty((n_samples, 3))
    out_it = np.zeros(n_samples, dtype=np.int64)
    out_conv = np.ones(n_samples, dtype=np.bool_)
    # stats: max iterations, total iterations, unconverged steps, max residual/scale
    stats = np.zeros(4)
    status = 0  # 0 ok, 1 strict non-convergence, 2 non-finite state
    bt = hat(b0)
    inv2eps = 0.5 / eps
    mpsi_h = h * gain
    ref = np.zeros(3)
    x_curr = x0.copy()
    x_lo = np.zeros(3)
    d_prev = np.zeros(3)
    v_curr = v0.copy()
    done = 0
    for n in range(n_steps):
        if n == 0:
            d, v_next, it, inc, conv = _startup_kernel(
                x0, v0, h, mpsi_h, defect, phi, a1, a1_jac, f, params, tol, max_iter)
            if check_residual:
                r, sc = _startup_residual_kernel(x0, v0, x0 + d, h, inv2eps, bt, psi, a1, a1_jac, f, params)
                stats[3] = max(stats[3], r / sc)
        else:
            d, v_next, it, inc, conv = _step_kernel(
                x_curr, d_prev, v_curr, h, mpsi_h, defect, phi, a1, a1_jac, f, params, tol, max_iter)
            if check_residual:
                r, sc = _step_residual_kernel(x_curr - d_prev, x_curr, x_curr + d, h, inv2eps, bt, psi,
                                              a1, a1_jac, f, params)
                stats[3] = max(stats[3], r / sc)
        if not (np.isfinite(d).all() and np.isfinite(v_next).all()):
            status = 2
            break
        xm = x_curr + 0.5 * d
        vm = matvec(phi, d) / h
        e, mo, mu = _observe(xm, vm, u, a1, b1, params, b0, eps, s_matrix, has_s)
        obs = np.array([e, mo, mu])
        if n == 0:
            ref = obs.copy()
        _record(n, stride, h, xm, vm, x_curr, v_curr, obs, ref, it, conv, out_t, out_xm, out_vm,
                out_x, out_v, out_drift, out_peak, out_it, out_conv)
        stats[0] = max(stats[0], it)
        stats[1] += it
        if not conv:
            stats[2] += 1
        x_curr = x_curr.copy()
        _accumulate(x_curr, x_lo, d)
        d_prev = d
        v_curr = v_next
        done = n + 1
        if strict and not conv:
            status = 1
            break
    n_rec = (done + stride - 1) // stride
    return (out_t[:n_rec], out_xm[:n_rec], out_vm[:n_rec], out_x[:n_rec], out_v[:n_rec],
            out_drift[:n_rec], out_peak[:n_rec], out_it[:n_rec], out_conv[:n_rec],
            x_curr, v_curr, done, stats, status)


# ------------------------------------------------------------- Python API


def _vec(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _pack(model, h):
    return build_filters(abs(h), model.epsilon, model.b0) if h > 0 else build_filters(
        h, model.epsilon, model.b0, allow_negative=True)


def _kernel_args(model, pack):
    h = pack.h
    return (h, h * pack.gain, pack.defect, pack.phi, model.a1_fn, model.a1_jac_fn, model.f_fn, model.params)


def _check(diag, cfg, where):
    if cfg.strict and not diag.converged:
        raise NonConvergenceError(
            f"fixed-point iteration did not converge at {where}: increment {diag.final_increment:.3e} "
            f"after {diag.iterations_used} iterations")


def fvi_startup(model, cfg, x0, v0):
    """Compute ``x_1`` from ``(x_0, v_0)`` and return the first two-step state.

    ``p_0 = v_0 + A(x_0)``; the implicit equation for ``x_1`` is solved in
    resolvent form by fixed-point iteration, then ``v_1`` is recovered from
    the ``Phi``-filtered difference quotient.
    """
    x0 = _vec(x0)
    v0 = _vec(v0)
    pack = _pack(model, cfg.h)
    d, v1, it, inc, conv = _startup_kernel(x0, v0, *_kernel_args(model, pack), cfg.fp_tol, cfg.fp_max_iter)
    diag = StepDiagnostics(int(it), float(inc), bool(conv))
    _check(diag, cfg, "startup")
    return TwoStepState(x0, x0 + d, v1, 1), diag


def fvi_step(model, cfg, state, backward=False):
    """Advance ``(x_{n-1}, x_n, v_n)`` by one step.

    With ``backward=True`` the scheme is run with ``-h``; feeding it the pair
    ``(x_{n+1}, x_n)`` recovers ``x_{n-1}`` because the scheme is symmetric.
    """
    h = -cfg.h if backward else cfg.h
    pack = _pack(model, h)
    x_curr = _vec(state.x_curr)
    d, v_next, it, inc, conv = _step_kernel(
        x_curr, x_curr - _vec(state.x_prev), _vec(state.v_curr), *_kernel_args(model, pack),
        cfg.fp_tol, cfg.fp_max_iter)
    diag = StepDiagnostics(int(it), float(inc), bool(conv))
    _check(diag, cfg, f"step {state.step_index}")
    return TwoStepState(state.x_curr, x_curr + d, v_next, state.step_index + 1), diag


def step_residual(model, h, x_prev, x_curr, x_next):
    """Residual of the un-rearranged two-step equation and its magnitude scale.

    Returns ``(max|residual|, scale)``; a correct solve gives a ratio at the
    level of the fixed-point tolerance.
    """
    pack = _pack(model, h)
    return _step_residual_kernel(
        _vec(x_prev), _vec(x_curr), _vec(x_next), h,
        0.5 / model.epsilon, hat(model.b0), pack.psi, model.a1_fn, model.a1_jac_fn, model.f_fn, model.params)


def startup_residual(model, h, x0, v0, x1):
    pack = _pack(model, h)
    return _startup_residual_kernel(
        _vec(x0), _vec(v0), _vec(x1), h,
        0.5 / model.epsilon, hat(model.b0), pack.psi, model.a1_fn, model.a1_jac_fn, model.f_fn, model.params)


@dataclass(frozen=True)
class TrajectoryRecord:
    """One step ``n -> n+1``: midpoint data where the invariants are measured,
    the left endpoint ``(x_n, v_n)``, drifts relative to the first midpoint,
    and the fixed-point diagnostics."""

    t: float
    x_mid: np.ndarray
    v_mid: np.ndarray
    x: np.ndarray
    v: np.ndarray
    e_H: float
    e_M: float
    e_I: float
    iterations: int
    converged: bool


@dataclass
class Trajectory:
    """Sampled output of a run.

    Row ``k`` describes step ``n = k * stride``. ``peak`` holds the largest
    ``|e_H|, |e_M|, |e_I|`` over all steps of the stride block, so drift
    maxima are exact even when the samples are thinned. ``iterations`` and
    ``converged`` are likewise block-wise worst cases.
    """

    method: str
    h: float
    stride: int
    t: np.ndarray
    x_mid: np.ndarray
    v_mid: np.ndarray
    x: np.ndarray
    v: np.ndarray
    drift: np.ndarray
    peak: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    x_final: np.ndarray
    v_final: np.ndarray
    n_steps: int
    max_iterations: int = 0
    total_iterations: int = 0
    unconverged_steps: int = 0
    max_residual_ratio: float = nan

    @property
    def t_final(self):
        return self.n_steps * self.h

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for k in range(len(self.t)):
            yield TrajectoryRecord(
                float(self.t[k]), self.x_mid[k], self.v_mid[k], self.x[k], self.v[k],
                float(self.drift[k, 0]), float(self.drift[k, 1]), float(self.drift[k, 2]),
                int(self.iterations[k]), bool(self.converged[k]))


def fvi_run(model, cfg, x0=None, v0=None, stride=1, check_residual=False):
    """Integrate with FVI for ``cfg.n_steps`` steps.

    Parameters
    ----------
    model : FieldModel
    cfg : SolverConfig
    x0, v0 : array_like, optional
        Initial state; defaults to the model's built-in initial values.
    stride : int
        Keep every ``stride``-th step in the output. Integration is unaffected.
    check_residual : bool
        Also evaluate the un-rearranged two-step residual at every step and
        report the worst ``residual / scale`` in ``max_residual_ratio``.

    Returns
    -------
    Trajectory
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x0 = _vec(model.x0 if x0 is None else x0)
    v0 = _vec(model.v0 if v0 is None else v0)
    pack = _pack(model, cfg.h)
    has_s = model.s_matrix is not None
    s = model.s_matrix if has_s else np.zeros((3, 3))
    out = _fvi_kernel(
        model.a1_fn, model.a1_jac_fn, model.f_fn, model.u_fn, model.b1_fn, model.params, model.b0,
        model.epsilon, s, has_s, pack.psi, pack.phi, pack.gain, pack.defect, cfg.h, x0, v0, cfg.n_steps,
        stride, cfg.fp_tol, cfg.fp_max_iter, cfg.strict, check_residual)
    t, xm, vm, x, v, drift, peak, its, conv, xf, vf, done, stats, status = out
    traj = Trajectory(
        "fvi", cfg.h, stride, t, xm, vm, x, v, drift, peak, its, conv, xf, vf, int(done),
        int(stats[0]), int(stats[1]), int(stats[2]), float(stats[3]) if check_residual else nan)
    if status == 1:
        raise NonConvergenceError(f"fixed-point iteration did not converge at step {done - 1}")
    if status == 2:
        raise FloatingPointError(f"non-finite state after step {done}")
    return traj


# ------------------------------------------------------------------- Boris


@njit((VEC, VEC, _F8, VEC_FN, VEC_FN, VEC, VEC, _F8), cache=True)
def _boris_velocity(v, x, dt, b1, f, params, b0, inv_eps):
    e = f(x, params)
    b = b0 * inv_eps + b1(x, params)
    v_minus = v + 0.5 * dt * e
    t = 0.5 * dt * b
    s = 2.0 * t / (1.0 + dot(t, t))
    v_prime = v_minus + cross(v_minus, t)
    v_plus = v_minus + cross(v_prime, s)
    return v_plus + 0.5 * dt * e


@njit((VEC_FN, VEC_FN, SCALAR_FN, VEC_FN, VEC, VEC, _F8, MAT, _BOOL, _F8, VEC, VEC, _I8, _I8), cache=True)
def _boris_kernel(a1, f, u, b1, params, b0, eps, s_matrix, has_s, h, x0, v0, n_steps, stride):
    # Staggered velocities u_{k+1/2}; endpoint velocities are v_k = (u_{k-1/2} + u_{k+1/2}) / 2.
    n_samples = (n_steps + stride - 1) // stride
    out_t = np.empty(n_samples)
    out_xm = np.empty((n_samples, 3))
    out_vm = np.empty((n_samples, 3))
    out_x = np.empty((n_samples, 3))
    out_v = np.empty((n_samples, 3))
    out_drift = np.empty((n_samples, 3))
    out_peak = np.empty((n_samples, 3))
    out_it = np.zeros(n_samples, dtype=np.int64)
    out_conv = np.ones(n_samples, dtype=np.bool_)
    inv_eps = 1.0 / eps
    u_half = _boris_velocity(v0, x0, -0.5 * h, b1, f, params, b0, inv_eps)
    x_curr = x0.copy()
    u_next = _boris_velocity(u_half, x_curr, h, b1, f, params, b0, inv_eps)
    v_curr = 0.5 * (u_half + u_next)
    ref = np.zeros(3)
    for n in range(n_steps):
        x_next = x_curr + h * u_next
        u_after = _boris_velocity(u_next, x_next, h, b1, f, params, b0, inv_eps)
        v_next = 0.5 * (u_next + u_after)
        xm = 0.5 * (x_curr + x_next)
        vm = 0.5 * (v_curr + v_next)
        e, mo, mu = _observe(xm, vm, u, a1, b1, params, b0, eps, s_matrix, has_s)
        obs = np.array([e, mo, mu])
        if n == 0:
            ref = obs.copy()
        _record(n, stride, h, xm, vm, x_curr, v_curr, obs, ref, 0, True, out_t, out_xm, out_vm,
                out_x, out_v, out_drift, out_peak, out_it, out_conv)
        x_curr = x_next
        v_curr = v_next
        u_next = u_after
    return out_t, out_xm, out_vm, out_x, out_v, out_drift, out_peak, out_it, out_conv, x_curr, v_curr


def boris_init(model, h, x0, v0):
    """Staggered start ``u_{-1/2}``: one Boris velocity update of size ``-h/2`` at ``x_0``."""
    return _boris_velocity(_vec(v0), _vec(x0), -0.5 * h, model.b1_fn, model.f_fn,
                           model.params, model.b0, 1.0 / model.epsilon)


def boris_step(model, h, x, v):
    """One Boris push ``(x_n, u_{n-1/2}) -> (x_{n+1}, u_{n+1/2})``.

    Half electric kick, exact tan-half-angle rotation about ``B(x_n)``,
    half kick, then ``x_{n+1} = x_n + h u_{n+1/2}``.
    """
    x = _vec(x)
    u = _boris_velocity(_vec(v), x, h, model.b1_fn, model.f_fn, model.params, model.b0,
                        1.0 / model.epsilon)
    return x + h * u, u


def boris_run(model, h, t_end, x0=None, v0=None, stride=1):
    """Boris baseline with the same output layout as :func:`fvi_run`.

    Midpoint states are arithmetic means of synchronised endpoint states.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x0 = _vec(model.x0 if x0 is None else x0)
    v0 = _vec(model.v0 if v0 is None else v0)
    n_steps = SolverConfig(h=h, t_end=t_end).n_steps
    has_s = model.s_matrix is not None
    s = model.s_matrix if has_s else np.zeros((3, 3))
    out = _boris_kernel(model.a1_fn, model.f_fn, model.u_fn, model.b1_fn, model.params, model.b0,
                        model.epsilon, s, has_s, h, x0, v0, n_steps, stride)
    t, xm, vm, x, v, drift, peak, its, conv, xf, vf = out
    return Trajectory("boris", h, stride, t, xm, vm, x, v, drift, peak, its, conv, xf, vf, n_steps)


# --------------------------------------------------------------- reference


@lru_cache(maxsize=None)
def _rhs_for(b1, f):
    # A closure over the field functions: calling a kernel that takes typed
    # function arguments from Python costs ~100 us per call, this ~2 us.
    @njit
    def rhs(t, y, params, b0, inv_eps):
        x = y[:3].copy()
        v = y[3:].copy()
        out = np.empty(6)
        out[:3] = v
        out[3:] = cross(v, b0 * inv_eps + b1(x, params)) + f(x, params)
        return out

    return rhs


class ReferenceSolution:
    """Dense reference trajectory; call with a time to get ``(x, v)``."""

    def __init__(self, sol, t_end, nfev):
        self._sol = sol
        self.t_end = t_end
        self.nfev = nfev

    def __call__(self, t):
        y = self._sol(t)
        return y[:3].copy(), y[3:].copy()


def reference_solve(model, x0=None, v0=None, t_end=None, tol=1e-12):
    """High-accuracy reference by the adaptive Dormand-Prince 8(5,3) pair.

    ``rtol = atol = tol``. When ``eps < 1`` the step is capped at ``eps/4``
    so the gyration is always resolved. Runs with ``eps <= 1e-4`` and
    ``t_end > 10`` are refused with :class:`ReferenceCostError`.
    """
    if tol < 1e-13:
        raise ValueError("tol must be >= 1e-13")
    x0 = _vec(model.x0 if x0 is None else x0)
    v0 = _vec(model.v0 if v0 is None else v0)
    t_end = model.t_end if t_end is None else float(t_end)
    eps = model.epsilon
    if eps <= 1e-4 and t_end > 10:
        raise ReferenceCostError(f"reference solve with eps={eps:g} over t_end={t_end:g} is too expensive")
    rhs = _rhs_for(model.b1_fn, model.f_fn)
    max_step = eps / 4 if eps < 1 else np.inf
    sol = solve_ivp(rhs, (0.0, t_end), np.concatenate([x0, v0]),
                    method="DOP853", rtol=tol, atol=tol, dense_output=True, max_step=max_step,
                    args=(model.params, model.b0, 1.0 / eps))
    if sol.status != 0:
        raise RuntimeError(f"reference solver failed: {sol.message}")
    return ReferenceSolution(sol.sol, t_end, sol.nfev)
