from math import pi, sin, sqrt, tan

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fvi.filters import ResonanceError, build_filters, check_resonance, sinc, sinch_inv, tanc, tanch
from fvi.linalg3 import hat

E3 = np.array([0.0, 0.0, 1.0])


def test_filter_functions_at_zero():
    assert tanc(0.0) == 1.0
    assert sinc(0.0) == 1.0
    assert tanch(0.0) == 1.0
    assert sinch_inv(0.0) == 1.0


def test_filter_function_values():
    assert tanc(pi / 4) == pytest.approx(4 / pi, rel=1e-15)
    assert sinc(pi / 2) == pytest.approx(2 / pi, rel=1e-15)
    assert tanch(1.0) == pytest.approx(np.tanh(1.0), rel=1e-15)
    assert sinch_inv(2.0) == pytest.approx(2.0 / np.sinh(2.0), rel=1e-15)


@pytest.mark.parametrize("z", np.geomspace(1e-6, 1e-3, 13))
def test_series_branch_agrees_with_direct_formula(z):
    z2 = z * z
    assert 1 + z2 / 3 + 2 * z2 * z2 / 15 == pytest.approx(tan(z) / z, rel=1e-15)
    assert 1 - z2 / 6 + z2 * z2 / 120 == pytest.approx(sin(z) / z, rel=1e-15)
    # both sides of the switch
    for w in (z, -z):
        assert tanc(w) == pytest.approx(tan(w) / w, rel=1e-15)
        assert sinc(w) == pytest.approx(sin(w) / w, rel=1e-15)


@pytest.mark.parametrize("k", [0, 1, -1, 5])
def test_tanc_pole_is_an_error(k):
    with pytest.raises(ResonanceError):
        tanc(pi / 2 + k * pi)
    tanc(pi / 2 + k * pi + 1e-6)


def test_build_filters_rejects_tan_pole_and_sinc_zero():
    with pytest.raises(ResonanceError):
        build_filters(pi, 1.0, E3)  # h/2eps = pi/2
    with pytest.raises(ResonanceError):
        build_filters(2 * pi, 1.0, E3)  # h/2eps = pi, 1/sinc singular


def test_build_filters_small_step_is_identity():
    pack = build_filters(1e-10, 1.0, E3)
    np.testing.assert_allclose(pack.psi, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(pack.phi, np.eye(3), atol=1e-12)


def test_build_filters_quarter_turn():
    pack = build_filters(pi / 2, 1.0, E3)
    np.testing.assert_allclose(pack.psi, np.diag([4 / pi, 4 / pi, 1.0]), atol=1e-14)
    np.testing.assert_allclose(pack.phi, np.diag([pi / (2 * sqrt(2))] * 2 + [1.0]), atol=1e-14)
    assert pack.theta == pytest.approx(pi / 4)


@pytest.mark.parametrize("h, eps", [(0.0, 1.0), (-0.1, 1.0), (0.1, 0.0)])
def test_build_filters_validates(h, eps):
    with pytest.raises(ValueError):
        build_filters(h, eps, E3)
    with pytest.raises(ValueError):
        build_filters(0.1, 1.0, [0.0, 0.0, 2.0])


def test_negative_step_allowed_on_request():
    fwd = build_filters(0.3, 0.1, E3)
    bwd = build_filters(-0.3, 0.1, E3, allow_negative=True)
    np.testing.assert_array_equal(fwd.psi, bwd.psi)  # even in h
    np.testing.assert_array_equal(fwd.phi, bwd.phi)


unit = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda t: np.linalg.norm(t) > 0.1).map(lambda t: np.array(t) / np.linalg.norm(t))


@given(unit, st.floats(1e-3, 1.0), st.floats(1e-4, 1.0))
def test_filter_pack_invariants(b0, h, eps):
    theta = h / (2 * eps)
    if min(abs(np.cos(theta)), abs(np.sin(theta))) < 1e-3:
        return
    pack = build_filters(h, eps, b0)
    bt = hat(b0)
    bt2 = bt @ bt
    psi, phi = pack.psi, pack.phi
    scale = max(1.0, np.abs(psi).max(), np.abs(phi).max())
    np.testing.assert_allclose(psi, psi.T, atol=1e-14 * scale)
    np.testing.assert_allclose(phi, phi.T, atol=1e-14 * scale)
    np.testing.assert_allclose(psi @ bt, bt @ psi, atol=1e-14 * scale)
    np.testing.assert_allclose(psi @ bt2, bt2 @ psi, atol=1e-14 * scale)
    v = np.array([0.3, -1.2, 0.7])
    par = np.outer(b0, b0)
    np.testing.assert_allclose(par @ psi @ v, par @ v, atol=1e-13 * scale)
    np.testing.assert_allclose(par @ phi @ v, par @ v, atol=1e-13 * scale)
    np.testing.assert_allclose(pack.resolvent @ (np.eye(3) + theta * psi @ bt), np.eye(3), atol=1e-12)


def test_spectral_action_for_e3():
    h, eps = 0.7, 0.2
    pack = build_filters(h, eps, E3)
    theta = h / (2 * eps)
    perp = np.array([0.6, -0.8, 0.0])
    np.testing.assert_allclose(pack.psi @ perp, tanc(theta) * perp, rtol=1e-14)
    np.testing.assert_allclose(pack.phi @ perp, perp / sinc(theta), rtol=1e-14)
    np.testing.assert_allclose(pack.psi @ E3, E3, rtol=1e-14)
    np.testing.assert_allclose(pack.phi @ E3, E3, rtol=1e-14)


def test_check_resonance_examples():
    assert check_resonance(pi / 2, 1.0, n_max=1, c=0.1) == []
    bad = check_resonance(pi, 1.0, n_max=1, c=0.1)
    assert [v.k for v in bad] == [1] and bad[0].failed == "cos"
    bad = check_resonance(pi / 2, 1.0, n_max=2, c=0.1)
    assert [v.k for v in bad] == [2] and "cos" in bad[0].failed
    assert bad[0].cos_value == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("n_max, c", [(0, 0.1), (1, 0.0), (1, 1.0)])
def test_check_resonance_validates(n_max, c):
    with pytest.raises(ValueError):
        check_resonance(0.1, 1.0, n_max=n_max, c=c)


@given(unit, st.floats(1e-3, 1.0), st.floats(1e-4, 1.0))
def test_propagator_is_a_rotation_about_b0(b0, h, eps):
    theta = h / (2 * eps)
    if min(abs(np.cos(theta)), abs(np.sin(theta))) < 1e-3:
        return
    pack = build_filters(h, eps, b0)
    psi_bt = theta * pack.psi @ hat(b0)
    p = pack.propagator
    np.testing.assert_allclose(p, pack.resolvent @ (np.eye(3) - psi_bt), atol=1e-12)
    np.testing.assert_allclose(p.T @ p, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(pack.gain, pack.resolvent @ pack.psi, atol=1e-12)
    # the field-aligned direction is fixed up to one rounding of the product
    assert np.abs(pack.defect @ b0).max() <= 8 * np.finfo(float).eps * max(1.0, np.abs(pack.defect).max())
