import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fvi.fields import problem3, total_field
from fvi.integrators import SolverConfig, fvi_run, reference_solve
from fvi.observables import (MissingInvarianceError, ObservableSample, ZeroFieldError, decile_width,
                             drift_series, drift_summary, energy, magnetic_moment, momentum, observe,
                             project_parallel, relative_errors)

from helpers import E3, free_model

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
unit = vec3.filter(lambda v: np.linalg.norm(v) > 0.1).map(lambda v: v / np.linalg.norm(v))


def rotation(axis, angle):
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


# ------------------------------------------------------------------- energy


def test_energy_at_rest_with_zero_potential():
    assert energy(free_model(), [0.3, 0.1, 2.0], np.zeros(3)) == 0.0


def test_energy_problem1_initial_value(p1):
    assert energy(p1, p1.x0, p1.v0) == pytest.approx(0.0353, abs=1e-12)


@given(vec3, vec3)
def test_energy_kinetic_scaling(x, v):
    m = free_model()
    assert energy(m, x, 2 * v) - energy(m, x, v) == pytest.approx(1.5 * v @ v, rel=1e-12, abs=1e-12)


# ----------------------------------------------------------------- momentum


def test_momentum_at_origin(p2):
    assert momentum(p2, np.zeros(3), [1.0, 2.0, 3.0]) == 0.0


def test_momentum_problem1_initial_value(p1):
    assert momentum(p1, p1.x0, p1.v0) == pytest.approx(0.09 - 1 / 3, abs=1e-12)


def test_momentum_matches_printed_formulas(p1, p2, rng):
    for x, v in zip(rng.uniform(-2, 2, (20, 3)), rng.normal(size=(20, 3))):
        r = np.hypot(x[0], x[1])
        printed1 = (v[0] - x[1] * r / 3) * x[1] - (v[1] + x[0] * r / 3) * x[0]
        printed2 = ((v[0] + (x[2] ** 2 - x[1] ** 2 - x[1]) / 2) * x[1]
                    - (v[1] + (x[2] ** 2 - x[0] ** 2 + x[0]) / 2) * x[0])
        assert momentum(p1, x, v) == pytest.approx(printed1, abs=1e-12)
        assert momentum(p2, x, v) == pytest.approx(printed2, abs=1e-12)


def test_momentum_requires_generator():
    with pytest.raises(MissingInvarianceError):
        momentum(problem3(0.1), np.ones(3), np.ones(3))


# ---------------------------------------------------------- magnetic moment


def test_magnetic_moment_parallel_velocity_is_zero(p1):
    x = np.array([0.5, 0.7, 0.1])
    assert magnetic_moment(p1, x, 3.0 * total_field(p1, x)) == pytest.approx(0.0, abs=1e-15)


def test_magnetic_moment_example():
    assert magnetic_moment(free_model(0.1, E3), np.zeros(3), [1.0, 0.0, 0.0]) == pytest.approx(0.5, abs=1e-12)


def test_magnetic_moment_under_pure_rescaling_of_epsilon():
    # With B = e3/eps both the prefactor and |v x B|^2 / |B|^3 scale with eps, so I is unchanged.
    v = np.array([1.0, 0.0, 0.0])
    i1 = magnetic_moment(free_model(0.1), np.zeros(3), v)
    i2 = magnetic_moment(free_model(0.2), np.zeros(3), v)
    assert i1 / i2 == pytest.approx(1.0, abs=1e-12)
    assert i2 == pytest.approx(0.5, abs=1e-12)


@given(st.floats(0, 2 * np.pi))
def test_magnetic_moment_invariant_under_rotation_about_field(angle):
    model = problem3(0.05)
    x = np.array([0.2, -0.4, 0.9])
    b = total_field(model, x)
    v = np.array([0.3, 0.8, -0.2])
    rv = rotation(b / np.linalg.norm(b), angle) @ v
    assert magnetic_moment(model, x, rv) == pytest.approx(magnetic_moment(model, x, v), rel=1e-12)


def test_magnetic_moment_zero_field():
    with pytest.raises(ZeroFieldError):
        magnetic_moment(free_model(np.inf), np.zeros(3), np.ones(3))


# --------------------------------------------------------------- projection


@pytest.mark.parametrize("v, par, perp", [
    (E3, E3, np.zeros(3)),
    (np.array([1.0, -2.0, 0.0]), np.zeros(3), np.array([1.0, -2.0, 0.0])),
    (np.array([1.0, 2.0, 3.0]), np.array([0.0, 0.0, 3.0]), np.array([1.0, 2.0, 0.0])),
])
def test_project_parallel_examples(v, par, perp):
    p, q = project_parallel(E3, v)
    np.testing.assert_array_equal(p, par)
    np.testing.assert_array_equal(q, perp)


@given(unit, vec3)
def test_projection_properties(b0, v):
    par, perp = project_parallel(b0, v)
    scale = max(1.0, np.linalg.norm(v))
    np.testing.assert_allclose(par + perp, v, atol=1e-14 * scale)
    assert np.linalg.norm(np.cross(par, b0)) <= 1e-14 * scale
    assert abs(perp @ b0) <= 1e-14 * scale


def test_projection_idempotent_on_parallel_part():
    b0 = np.array([1.0, 2.0, 2.0]) / 3.0
    par, _ = project_parallel(b0, [0.3, -1.0, 2.0])
    again, rest = project_parallel(b0, par)
    np.testing.assert_allclose(again, par, rtol=1e-15)
    np.testing.assert_allclose(rest, 0.0, atol=1e-15)


# ------------------------------------------------------------------- errors


def test_relative_errors_identical_states():
    x, v = np.array([1.0, 2.0, 3.0]), np.array([0.1, -0.2, 0.4])
    rec = relative_errors(x, v, x, v, E3)
    assert (rec.error_x, rec.error_v, rec.error_vpar, rec.error_vperp) == (0.0, 0.0, 0.0, 0.0)
    assert rec.absolute == ()


def test_relative_errors_homogeneous_ratio():
    x, v = np.array([1.0, 2.0, 3.0]), np.array([0.1, -0.2, 0.4])
    rec = relative_errors(1.01 * x, 1.01 * v, x, v, E3)
    assert rec.error_x == pytest.approx(0.01, abs=1e-12)
    assert rec.error_vpar == pytest.approx(0.01, abs=1e-12)


def test_relative_errors_parallel_ignores_perpendicular_perturbation():
    x, v = np.array([1.0, 2.0, 3.0]), np.array([0.1, -0.2, 0.4])
    rec = relative_errors(x, v + np.array([0.05, 0.02, 0.0]), x, v, E3)
    assert rec.error_vpar == 0.0
    assert rec.error_vperp > 0.0


def test_relative_errors_switch_to_absolute():
    x = np.array([1.0, 2.0, 3.0])
    rec = relative_errors(x, [0.0, 0.0, 1e-3], x, [0.0, 0.0, 0.0], E3)
    assert set(rec.absolute) == {"v", "vpar", "vperp"}
    assert rec.error_v == pytest.approx(1e-3)
    assert rec.error_vperp == 0.0


# ------------------------------------------------------------------- drifts


def samples(values):
    return [ObservableSample(float(k), e, None, e, np.zeros(3), np.zeros(3)) for k, e in enumerate(values)]


def test_constant_series_has_no_drift():
    rec = drift_series(samples([2.5] * 30))
    assert rec.max_abs["energy"] == 0.0
    assert rec.first_decile["energy"] == rec.last_decile["energy"] == 0.0
    assert rec.max_abs["momentum"] is None


def test_drift_series_example():
    rec = drift_series(samples([1.0, 1.1, 0.95]))
    assert rec.max_abs["energy"] == pytest.approx(0.1, abs=1e-15)
    assert rec.last_decile["energy"] == pytest.approx(0.05, abs=1e-15)
    assert rec.first_decile["energy"] == 0.0


def test_empty_series():
    rec = drift_series([])
    assert rec.n == 0
    assert rec.max_abs["energy"] is None


@pytest.mark.parametrize("n, w", [(1, 1), (3, 1), (10, 1), (11, 2), (100, 10), (1001, 101)])
def test_decile_width(n, w):
    assert decile_width(n) == w


def test_secular_growth_check():
    grow = drift_series(samples(1.0 + 1e-3 * np.arange(100.0)))
    flat = drift_series(samples(1.0 + 1e-3 * np.sin(np.arange(100.0))))
    assert not grow.no_secular_growth("energy")
    assert flat.no_secular_growth("energy")


def test_problem1_energy_drift_small(p1):
    traj = fvi_run(p1, SolverConfig(h=0.01, t_end=100.0), stride=10)
    rec = drift_summary(traj)
    assert rec.max_abs["energy"] < 1e-3
    assert rec.max_abs["momentum"] is not None


def test_drift_summary_matches_observe(p1):
    traj = fvi_run(p1, SolverConfig(h=0.05, t_end=5.0))
    obs = [observe(p1, r.t, r.x_mid, r.v_mid) for r in traj]
    direct = drift_series(obs)
    summary = drift_summary(traj)
    for name in ("energy", "momentum", "magnetic_moment"):
        assert summary.max_abs[name] == pytest.approx(direct.max_abs[name], rel=1e-9, abs=1e-15)


def test_drift_summary_without_momentum():
    traj = fvi_run(problem3(0.01), SolverConfig(h=0.01, t_end=1.0))
    assert drift_summary(traj).max_abs["momentum"] is None


# ------------------------------------------------------- reference invariants


@pytest.mark.parametrize("tol", [1e-10, 1e-12])
def test_invariants_along_reference(p1, p2, tol):
    for model, with_m in ((p1, True), (p2, False)):
        ref = reference_solve(model, t_end=1.0, tol=tol)
        ts = np.linspace(0.0, 1.0, 51)
        obs = [observe(model, t, *ref(t)) for t in ts]
        e = np.array([o.energy for o in obs])
        assert (np.abs(e - e[0]) <= 10 * tol * (1 + ts)).all()
        if with_m:
            m = np.array([o.momentum for o in obs])
            assert (np.abs(m - m[0]) <= 10 * tol * (1 + ts)).all()
