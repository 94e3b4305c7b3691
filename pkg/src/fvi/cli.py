"""Command-line front end.

Subcommands::

    run       one trajectory, written sample by sample
    converge  error sweep against the reference solver
    conserve  long-time drift of the invariants
    check     non-resonance audit of a step size

Every option may also come from ``--config FILE`` (``key = value`` lines,
``#`` comments, keys spelled like the long option with or without dashes);
flags on the command line win. Exit status: 0 success, 1 runtime failure,
2 usage error.
"""
import argparse
import logging
import sys
from math import pi

import numpy as np

from .fields import PROBLEMS, get_problem
from .filters import ResonanceError, check_resonance
from .harness import (COUPLINGS, FIXED_EPS_PROBLEMS, METHODS, SweepSpec, conservation_run,
                      convergence_sweep, emit_csv, emit_trajectory_csv)
from .integrators import NonConvergenceError, SolverConfig, boris_run, fvi_run
from .observables import drift_summary

logger = logging.getLogger("fvi")

PROFILES = {
    # strong-field eps = pi / 2^k; long-run horizon
    "desk": {"eps_k": (6, 11), "conserve_t_end": 1000.0},
    "full": {"eps_k": (6, 13), "conserve_t_end": 10000.0},
}
DEFAULT_CONSERVE_EPS = 1e-4


class UsageError(Exception):
    pass


def _positive(text):
    try:
        value = _number(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
    return value


def _number(text):
    """A float, ``pi``, or ``a/2^k`` style fractions such as ``pi/2^6`` or ``1/2**8``."""
    text = str(text).strip().replace("**", "^")
    if "/" in text:
        num, den = text.split("/", 1)
        return _number(num) / _number(den)
    if "^" in text:
        base, exp = text.split("^", 1)
        return _number(base) ** _number(exp)
    if text == "pi":
        return pi
    return float(text)


def _grid(text):
    try:
        values = [_number(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not values or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError(f"grid entries must be positive: {text!r}")
    return values


def _k_range(text):
    try:
        lo, hi = (int(t) for t in str(text).split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K1:K2, got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _flag(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p, methods=("fvi", "boris")):
    p.add_argument("--problem", choices=sorted(PROBLEMS), default="p1")
    p.add_argument("--method", choices=methods, default="fvi")
    p.add_argument("--t-end", type=_positive, help="final time (default: the problem's own)")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--strict", action="store_true", help="fail on any fixed-point non-convergence")
    p.add_argument("--fp-tol", type=_positive, default=1e-16)
    p.add_argument("--fp-max-iter", type=int, default=50)
    p.add_argument("--config", help="key=value file supplying option defaults")


def build_parser():
    parser = argparse.ArgumentParser(prog="fvi", description="Filtered variational integrator experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("run", help="integrate one trajectory")
    _common(p)
    p.add_argument("--h", type=_positive, required=False)
    p.add_argument("--eps", type=_positive)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("converge", help="global errors against the reference solver")
    _common(p, METHODS)
    p.add_argument("--h-grid", type=_grid, help="explicit step sizes, comma separated")
    p.add_argument("--k-range", type=_k_range, help="h = 1/2^k for k in K1:K2 (default 1:8)")
    p.add_argument("--eps-grid", type=_grid, help="explicit eps values, comma separated")
    p.add_argument("--eps-k-range", type=_k_range, help="eps = pi/2^k for k in K1:K2 (default by profile)")
    p.add_argument("--coupling", choices=COUPLINGS,
                   help="h rule for eps sweeps (default: linear with alpha 2 for p3/p4)")
    p.add_argument("--alpha", type=_positive, default=2.0)
    p.add_argument("--tol", type=_positive, default=1e-12)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("conserve", help="long-time drift of the invariants")
    _common(p)
    p.add_argument("--h-grid", type=_grid, help="step sizes (default 0.1,0.01 for p1/p2, 0.01 otherwise)")
    p.add_argument("--eps", type=_positive, help=f"eps for p3/p4 (default {DEFAULT_CONSERVE_EPS:g})")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("check", help="non-resonance audit of |sin(k h/2eps)| and |cos(k h/2eps)|")
    p.add_argument("--h", type=_positive, required=False)
    p.add_argument("--eps", type=_positive, required=False)
    p.add_argument("--n-max", type=int, default=5)
    p.add_argument("--c", type=_positive, default=0.1)
    p.add_argument("--config")
    return parser


def read_config(path):
    """``key = value`` pairs; blank lines and ``#`` comments are ignored."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(parser, argv, args):
    sub = parser.subcommands[args.command]
    known = {a.dest: a for a in sub._actions}
    explicit = {a.dest for a in sub._actions for s in argv if s.split("=", 1)[0] in a.option_strings}
    for key, value in read_config(args.config).items():
        action = known.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if key in explicit:
            continue
        try:
            if isinstance(action, argparse._StoreTrueAction):
                converted = _flag(value)
            elif action.type is not None:
                converted = action.type(value)
            else:
                converted = value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and converted not in action.choices:
            raise UsageError(f"config key {key!r}: {converted!r} not in {sorted(action.choices)}")
        setattr(args, key, converted)


def _fmt(x):
    return "n/a" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.3e}"


def _warn_resonance(h, eps):
    if eps >= 1.0:
        return
    bad = check_resonance(h, eps)
    if bad:
        ks = ",".join(str(v.k) for v in bad)
        print(f"warning: h={h:g}, eps={eps:g} violates the non-resonance bound for k={ks}", file=sys.stderr)


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")


def _validated(cls, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _eps_for(args, eps):
    if args.problem in FIXED_EPS_PROBLEMS:
        return 1.0
    if eps is None:
        raise UsageError(f"--eps is required for {args.problem}")
    return eps


def cmd_run(args):
    _require(args, "h", "out")
    if args.stride < 1:
        raise UsageError("--stride must be >= 1")
    model = get_problem(args.problem, _eps_for(args, args.eps))
    t_end = model.t_end if args.t_end is None else args.t_end
    _warn_resonance(args.h, model.epsilon)
    if args.method == "boris":
        traj = boris_run(model, args.h, t_end, stride=args.stride)
    else:
        cfg = _validated(SolverConfig, h=args.h, t_end=t_end, fp_tol=args.fp_tol,
                         fp_max_iter=args.fp_max_iter, strict=args.strict)
        traj = fvi_run(model, cfg, stride=args.stride)
    emit_trajectory_csv(traj, args.out)
    d = drift_summary(traj)
    print(f"run {args.problem} {args.method} h={args.h:g} eps={model.nominal_epsilon:g}: {traj.n_steps} steps, "
          f"max_eH={_fmt(d.max_abs['energy'])} max_eM={_fmt(d.max_abs['momentum'])} "
          f"max_eI={_fmt(d.max_abs['magnetic_moment'])} max_iter={traj.max_iterations} "
          f"unconverged={traj.unconverged_steps}")
    return traj.unconverged_steps


def converge_spec(args):
    fixed = args.problem in FIXED_EPS_PROBLEMS
    if args.eps_grid is not None:
        eps_grid = sorted(args.eps_grid, reverse=True)
    elif fixed:
        eps_grid = [1.0]
    else:
        lo, hi = args.eps_k_range or PROFILES[args.profile]["eps_k"]
        eps_grid = [pi / 2**k for k in range(lo, hi + 1)]
    coupling = args.coupling or ("independent" if fixed or args.h_grid or args.k_range else "linear")
    if args.h_grid is not None:
        h_grid = sorted(args.h_grid, reverse=True)
    elif coupling == "independent":
        lo, hi = args.k_range or (1, 8)
        h_grid = [1.0 / 2**k for k in range(lo, hi + 1)]
    else:
        h_grid = []
    if args.parallelism < 1:
        raise UsageError("--parallelism must be >= 1")
    return _validated(SweepSpec, problem=args.problem, method=args.method, h_grid=tuple(h_grid), eps_grid=tuple(eps_grid),
                     coupling=coupling, alpha=args.alpha, t_end=args.t_end, tol=args.tol, fp_tol=args.fp_tol,
                     fp_max_iter=args.fp_max_iter, strict=args.strict, parallelism=args.parallelism)


def cmd_converge(args):
    _require(args, "out")
    spec = converge_spec(args)
    for h, eps in spec.cells():
        if args.method == "fvi":
            _warn_resonance(h, get_problem(spec.problem, eps).epsilon)
    result = convergence_sweep(spec)
    emit_csv(result, args.out)
    orders = [c.order_x for c in result.cells if c.order_x is not None]
    skipped = sum(c.skipped for c in result.cells)
    failed = [c for c in result.cells if c.failed]
    for c in failed:
        print(f"error: h={c.h:g} eps={c.eps:g}: {c.reason}", file=sys.stderr)
    print(f"converge {spec.problem} {spec.method}: {len(result)} cells, skipped={skipped}, failed={len(failed)}, "
          f"orders_x=[{', '.join(f'{p:.2f}' for p in orders)}], unconverged={result.unconverged_steps}")
    return result.unconverged_steps, bool(failed)


def conserve_spec(args):
    fixed = args.problem in FIXED_EPS_PROBLEMS
    eps = 1.0 if fixed else (args.eps or DEFAULT_CONSERVE_EPS)
    h_grid = args.h_grid or ([0.1, 0.01] if fixed else [0.01])
    t_end = args.t_end or PROFILES[args.profile]["conserve_t_end"]
    if args.stride < 1 or args.parallelism < 1:
        raise UsageError("--stride and --parallelism must be >= 1")
    return _validated(SweepSpec, problem=args.problem, method=args.method, h_grid=tuple(sorted(h_grid, reverse=True)),
                     eps_grid=(eps,), t_end=t_end, sample_stride=args.stride, fp_tol=args.fp_tol,
                     fp_max_iter=args.fp_max_iter, strict=args.strict, check_residual=False,
                     parallelism=args.parallelism)


def cmd_conserve(args):
    _require(args, "out")
    spec = conserve_spec(args)
    for h, eps in spec.cells():
        _warn_resonance(h, get_problem(spec.problem, eps).epsilon)
    result = conservation_run(spec)
    emit_csv(result, args.out)
    failed = [c for c in result.cells if c.failed]
    for c in failed:
        print(f"error: h={c.h:g} eps={c.eps:g}: {c.reason}", file=sys.stderr)
    parts = [f"h={c.h:g}: eH={_fmt(c.max_eH)} eM={_fmt(c.max_eM)} eI={_fmt(c.max_eI)}" for c in result.cells]
    print(f"conserve {spec.problem} {spec.method} T={spec.t_end:g}: " + "; ".join(parts)
          + f"; unconverged={result.unconverged_steps}")
    return result.unconverged_steps, bool(failed)


def cmd_check(args):
    _require(args, "h", "eps")
    if args.n_max < 1 or not args.c < 1:
        raise UsageError("--n-max must be >= 1 and --c must lie in (0, 1)")
    bad = check_resonance(args.h, args.eps, n_max=args.n_max, c=args.c)
    theta = args.h / (2 * args.eps)
    for v in bad:
        print(f"violation k={v.k}: sin={v.sin_value:+.4f} cos={v.cos_value:+.4f} (|{v.failed}| < {args.c:g})")
    print(f"check h={args.h:g} eps={args.eps:g} h/(2eps)={theta:.6g}: {len(bad)} violation(s) for k<={args.n_max}")
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config:
            _apply_config(parser, argv, args)
        if args.command == "check":
            return cmd_check(args)
        if args.command == "run":
            unconverged, failed = cmd_run(args), False
        elif args.command == "converge":
            unconverged, failed = cmd_converge(args)
        else:
            unconverged, failed = cmd_conserve(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fvi: error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, ResonanceError, OSError, FloatingPointError, ValueError) as exc:
        print(f"fvi: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if unconverged:
        print(f"warning: {unconverged} step(s) stopped at the iteration cap without converging", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
