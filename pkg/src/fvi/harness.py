"""Experiment drivers: convergence sweeps, error-vs-eps sweeps and long-time runs.

A :class:`SweepSpec` expands into an ordered list of ``(h, eps)`` cells.
Cells are independent; they may run in a process pool but results always
come back in grid order. Everything is deterministic, so the same spec
always writes the same CSV bytes.
"""
import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from math import isnan, log, sqrt

import numpy as np

from .fields import get_problem
from .integrators import ReferenceCostError, SolverConfig, boris_run, fvi_run, reference_solve
from .observables import drift_summary, relative_errors

__all__ = [
    "METHODS",
    "COUPLINGS",
    "SweepSpec",
    "CellResult",
    "SweepResult",
    "regime",
    "loglog_slope",
    "observed_orders",
    "convergence_sweep",
    "conservation_run",
    "emit_csv",
    "emit_trajectory_csv",
    "read_csv",
    "SWEEP_COLUMNS",
    "TRAJECTORY_COLUMNS",
    "DRIFT_COLUMNS",
]

logger = logging.getLogger(__name__)

METHODS = ("fvi", "boris", "reference")
COUPLINGS = ("independent", "linear", "sqrt", "three_halves")
FIXED_EPS_PROBLEMS = ("p1", "p2")
DEFAULT_STEP_BUDGET = 10**8

SWEEP_COLUMNS = ("problem", "method", "h", "eps", "t_end", "error_x", "error_v", "error_vpar",
                 "error_vperp", "order_x", "skipped")
TRAJECTORY_COLUMNS = ("t", "x1", "x2", "x3", "v1", "v2", "v3", "e_H", "e_M", "e_I", "iters")
DRIFT_COLUMNS = ("problem", "method", "h", "eps", "t_end", "max_eH", "max_eM", "max_eI",
                 "first_decile_eH", "last_decile_eH")


def _descending(grid, name, allow_empty=False):
    grid = tuple(float(g) for g in grid)
    if not grid and not allow_empty:
        raise ValueError(f"{name} must be nonempty")
    if any(not g > 0 for g in grid):
        raise ValueError(f"{name} must be strictly positive")
    if any(a <= b for a, b in zip(grid, grid[1:])):
        raise ValueError(f"{name} must be sorted strictly descending")
    return grid


@dataclass(frozen=True)
class SweepSpec:
    """A grid of runs for one problem and one method.

    With ``coupling="independent"`` the cells are ``eps_grid x h_grid``
    (eps outer). The coupled rules ignore ``h_grid`` and set, per eps,
    ``h = alpha * eps``, ``alpha * sqrt(eps)`` or ``alpha * eps**1.5``.
    p1 and p2 fix eps = 1 and take ``eps_grid = (1.0,)``.
    """

    problem: str
    method: str = "fvi"
    h_grid: tuple = ()
    eps_grid: tuple = (1.0,)
    coupling: str = "independent"
    alpha: float = 1.0
    t_end: float | None = None
    sample_stride: int = 1
    tol: float = 1e-12
    fp_tol: float = 1e-16
    fp_max_iter: int = 50
    strict: bool = False
    check_residual: bool = True
    step_budget: int = DEFAULT_STEP_BUDGET
    parallelism: int = 1
    keep_trajectories: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}, got {self.coupling!r}")
        if self.problem in FIXED_EPS_PROBLEMS:
            object.__setattr__(self, "eps_grid", (1.0,))
        object.__setattr__(self, "eps_grid", _descending(self.eps_grid, "eps_grid"))
        object.__setattr__(self, "h_grid", _descending(
            self.h_grid, "h_grid", allow_empty=self.coupling != "independent"))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.t_end is not None and not self.t_end >= 0:
            raise ValueError("t_end must be non-negative")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def step_for(self, eps):
        if self.coupling == "linear":
            return self.alpha * eps
        if self.coupling == "sqrt":
            return self.alpha * sqrt(eps)
        return self.alpha * eps**1.5

    def cells(self):
        """``(h, eps)`` pairs in output order."""
        if self.coupling == "independent":
            return [(h, e) for e in self.eps_grid for h in self.h_grid]
        return [(self.step_for(e), e) for e in self.eps_grid]


@dataclass
class CellResult:
    problem: str
    method: str
    h: float
    eps: float
    t_end: float
    n_steps: int = 0
    error_x: float = float("nan")
    error_v: float = float("nan")
    error_vpar: float = float("nan")
    error_vperp: float = float("nan")
    absolute_errors: tuple = ()
    order_x: float | None = None
    skipped: bool = False
    reason: str = ""
    max_eH: float | None = None
    max_eM: float | None = None
    max_eI: float | None = None
    first_decile_eH: float | None = None
    last_decile_eH: float | None = None
    first_decile_eM: float | None = None
    last_decile_eM: float | None = None
    first_decile_eI: float | None = None
    last_decile_eI: float | None = None
    max_iterations: int = 0
    unconverged_steps: int = 0
    max_residual_ratio: float = float("nan")
    wall_time: float = 0.0
    trajectory: object = field(default=None, repr=False)

    @property
    def failed(self):
        return bool(self.reason) and not self.skipped


@dataclass
class SweepResult:
    kind: str  # "convergence" or "conservation"
    spec: SweepSpec
    cells: list

    def __len__(self):
        return len(self.cells)

    def column(self, name):
        return np.array([np.nan if getattr(c, name) is None else getattr(c, name) for c in self.cells],
                        dtype=float)

    @property
    def unconverged_steps(self):
        return sum(c.unconverged_steps for c in self.cells)


def regime(h, eps, c_upper=1.0, c_lower=1.0):
    """Step-size regime for a strong field.

    ``"large"`` for ``h^2 > C* eps``, ``"intermediate"`` for
    ``c* eps^2 <= h^2 <= C* eps`` and ``"small"`` below that.
    """
    h2 = h * h
    if h2 > c_upper * eps:
        return "large"
    if h2 >= c_lower * eps * eps:
        return "intermediate"
    return "small"


def loglog_slope(xs, ys, finest_half=True):
    """Least-squares slope of ``log y`` against ``log x``.

    With ``finest_half`` only the ``ceil(n/2)`` smallest ``x`` values enter
    the fit (at least two points).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ok = np.isfinite(xs) & np.isfinite(ys) & (xs > 0) & (ys > 0)
    xs, ys = xs[ok], ys[ok]
    if xs.size < 2:
        raise ValueError("need at least two positive points for a slope")
    order = np.argsort(xs)
    xs, ys = xs[order], ys[order]
    if finest_half:
        keep = max(2, -(-xs.size // 2))
        xs, ys = xs[:keep], ys[:keep]
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def observed_orders(steps, errors):
    """``p_k = log(e_k / e_{k+1}) / log(h_k / h_{k+1})``; ``log2`` of the ratio when h halves."""
    out = []
    for k in range(len(errors) - 1):
        e0, e1, h0, h1 = errors[k], errors[k + 1], steps[k], steps[k + 1]
        if e0 > 0 and e1 > 0 and h0 != h1 and not (isnan(e0) or isnan(e1)):
            out.append(log(e0 / e1) / log(h0 / h1))
        else:
            out.append(None)
    return out


@lru_cache(maxsize=16)
def _reference(problem, eps, t_end, tol):
    return reference_solve(get_problem(problem, eps), t_end=t_end, tol=tol)


def _integrate(spec, model, h, t_end):
    if spec.method == "boris":
        return boris_run(model, h, t_end, stride=spec.sample_stride)
    cfg = SolverConfig(h=h, t_end=t_end, fp_tol=spec.fp_tol, fp_max_iter=spec.fp_max_iter, strict=spec.strict)
    return fvi_run(model, cfg, stride=spec.sample_stride, check_residual=spec.check_residual)


def _fill_drifts(cell, traj):
    d = drift_summary(traj)
    for short, name in (("eH", "energy"), ("eM", "momentum"), ("eI", "magnetic_moment")):
        setattr(cell, f"max_{short}", d.max_abs[name])
        setattr(cell, f"first_decile_{short}", d.first_decile[name])
        setattr(cell, f"last_decile_{short}", d.last_decile[name])
    cell.max_iterations = traj.max_iterations
    cell.unconverged_steps = traj.unconverged_steps
    cell.max_residual_ratio = traj.max_residual_ratio


def _run_cell(args):
    kind, spec, h, eps = args
    model = get_problem(spec.problem, eps)
    t_end = model.t_end if spec.t_end is None else spec.t_end
    cell = CellResult(spec.problem, spec.method, h, eps, t_end)
    start = time.perf_counter()
    try:
        n_steps = SolverConfig(h=h, t_end=t_end).n_steps
        cell.n_steps = n_steps
        if n_steps > spec.step_budget:
            cell.skipped, cell.reason = True, f"{n_steps} steps exceed the budget of {spec.step_budget}"
        elif kind == "convergence":
            _convergence_cell(spec, model, cell, h, eps, t_end, n_steps)
        else:
            if spec.method == "reference":
                raise ValueError("conservation runs need an integrator, not the reference solver")
            traj = _integrate(spec, model, h, t_end)
            _fill_drifts(cell, traj)
            if spec.keep_trajectories:
                cell.trajectory = traj
    except ReferenceCostError as exc:
        cell.skipped, cell.reason = True, str(exc)
    except Exception as exc:
        if spec.strict:
            raise
        cell.reason = f"{type(exc).__name__}: {exc}"
        logger.warning("cell h=%g eps=%g failed: %s", h, eps, cell.reason)
    cell.wall_time = time.perf_counter() - start
    return cell


def _convergence_cell(spec, model, cell, h, eps, t_end, n_steps):
    ref = _reference(spec.problem, eps, t_end, spec.tol)
    t_n = n_steps * h
    xr, vr = ref(t_n)
    if spec.method == "reference":
        x, v = xr, vr
    else:
        traj = _integrate(spec, model, h, t_end)
        _fill_drifts(cell, traj)
        x, v = traj.x_final, traj.v_final
        if spec.keep_trajectories:
            cell.trajectory = traj
    err = relative_errors(x, v, xr, vr, model.b0)
    cell.error_x, cell.error_v = err.error_x, err.error_v
    cell.error_vpar, cell.error_vperp = err.error_vpar, err.error_vperp
    cell.absolute_errors = err.absolute


def _map_cells(kind, spec):
    work = [(kind, spec, h, e) for h, e in spec.cells()]
    if spec.parallelism == 1 or len(work) == 1:
        return [_run_cell(w) for w in work]
    with ProcessPoolExecutor(max_workers=spec.parallelism) as pool:
        # map preserves submission order whatever the completion order
        return list(pool.map(_run_cell, work))


def _attach_orders(spec, cells):
    groups = {}
    for c in cells:
        key = c.eps if spec.coupling == "independent" else None
        groups.setdefault(key, []).append(c)
    for group in groups.values():
        live = [c for c in group if not c.skipped and not c.failed]
        orders = observed_orders([c.h for c in live], [c.error_x for c in live])
        for c, p in zip(live, orders):
            c.order_x = p


def convergence_sweep(spec):
    """Integrate every cell and compare the final state with the reference.

    The comparison time is ``t_N = N h`` with ``N = floor(t_end / h)``.
    Cells whose reference would be too expensive are marked ``skipped``;
    failures are recorded in ``reason`` and the sweep carries on (unless
    ``spec.strict``). ``order_x`` holds the observed order between each
    cell and the next finer one of the same eps.
    """
    cells = _map_cells("convergence", spec)
    _attach_orders(spec, cells)
    return SweepResult("convergence", spec, cells)


def conservation_run(spec):
    """Long-horizon runs recording the drift maxima of ``H``, ``M`` (when defined) and ``I``."""
    return SweepResult("conservation", spec, _map_cells("conservation", spec))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "" if isnan(value) else repr(float(value))
    return str(value)


def _write(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def _sweep_rows(result):
    for c in result.cells:
        yield (c.problem, c.method, c.h, c.eps, c.t_end, c.error_x, c.error_v, c.error_vpar,
               c.error_vperp, c.order_x, c.skipped)


def _drift_rows(result):
    for c in result.cells:
        yield (c.problem, c.method, c.h, c.eps, c.t_end, c.max_eH, c.max_eM, c.max_eI,
               c.first_decile_eH, c.last_decile_eH)


def emit_csv(result, path):
    """Write a convergence result as sweep rows, a conservation result as drift-summary rows."""
    if result.kind == "convergence":
        _write(path, SWEEP_COLUMNS, _sweep_rows(result))
    elif result.kind == "conservation":
        _write(path, DRIFT_COLUMNS, _drift_rows(result))
    else:
        raise ValueError(f"unknown result kind {result.kind!r}")


def emit_trajectory_csv(traj, path):
    """One row per sample: midpoint state, drifts and fixed-point iterations."""
    rows = (
        (traj.t[k], *traj.x_mid[k], *traj.v_mid[k], *traj.drift[k], int(traj.iterations[k]))
        for k in range(len(traj))
    )
    _write(path, TRAJECTORY_COLUMNS, rows)


def read_csv(path):
    """Parse an emitted CSV into a list of dicts; numeric fields become floats, empty ones ``None``."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if v == "":
                    rec[k] = None
                else:
                    try:
                        rec[k] = float(v)
                    except ValueError:
                        rec[k] = v
            out.append(rec)
    return out
