"""Filtered two-step variational integrator for charged-particle dynamics.

``x'' = x' cross B(x) + F(x)`` with ``B = B0/eps + B1(x)``, integrated by a
symmetric two-step scheme whose filters keep it accurate for step sizes far
beyond the gyration period ``2 pi eps``.
"""
from .fields import FieldModel, get_problem, problem1, problem2, problem3, problem4
from .filters import ResonanceError, build_filters, check_resonance
from .harness import SweepSpec, conservation_run, convergence_sweep, emit_csv
from .integrators import (NonConvergenceError, ReferenceCostError, SolverConfig, boris_run, fvi_run,
                          fvi_startup, fvi_step, reference_solve)
from .observables import drift_summary, energy, magnetic_moment, momentum, relative_errors

__all__ = [
    "FieldModel", "get_problem", "problem1", "problem2", "problem3", "problem4",
    "ResonanceError", "build_filters", "check_resonance",
    "SweepSpec", "conservation_run", "convergence_sweep", "emit_csv",
    "NonConvergenceError", "ReferenceCostError", "SolverConfig", "boris_run", "fvi_run",
    "fvi_startup", "fvi_step", "reference_solve",
    "drift_summary", "energy", "magnetic_moment", "momentum", "relative_errors",
]
