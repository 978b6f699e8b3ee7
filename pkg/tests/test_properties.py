"""Randomised invariants over small scalar and 2x2 fields."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from hamspec import CoefficientField, HamiltonianSpec
from hamspec.cli import fmt
from hamspec.config import spec_from_dict, spec_to_dict
from hamspec.riccati import blow_up_time, integrate_backward, rhs_dual, rhs_primal, rhs_scalar, solve_gain
from hamspec.spectrum import growth_order_fit

from conftest import SYM2, scalar_spec

SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
coef = st.floats(-1.0, 1.0, allow_nan=False)


@st.composite
def h4_scalar(draw):
    """n = 1 fields satisfying the structural identities (H23 = H13, H24 = H14 when H33 = H44 = -1)."""
    h13, h14 = draw(coef), draw(coef)
    blocks = {(1, 1): draw(st.floats(0.2, 2.0)), (1, 2): draw(coef) * 0.5,
              (1, 3): h13, (2, 3): h13, (1, 4): h14, (2, 4): h14,
              (2, 2): -1.0 - h13**2 - h14**2 - draw(st.floats(0.0, 1.0))}
    return scalar_spec(T=draw(st.floats(0.5, 3.0)), blocks=blocks, beta=0.01)


@SETTINGS
@given(h4_scalar(), st.floats(0.0, 20.0), st.floats(0.5, 6.0), st.sampled_from(["primal", "dual"]))
def test_scalar_rhs_matches_matrix_rhs(spec, k, rho, family):
    general = rhs_primal if family == "primal" else rhs_dual
    assert rhs_scalar(k, 0.3 * spec.T, spec, rho, family) == pytest.approx(
        general(k, 0.3 * spec.T, spec, rho, "shift")[0, 0], rel=1e-9, abs=1e-9)


@SETTINGS
@given(h4_scalar(), st.floats(0.0, 1.0))
def test_unit_interval_coupling_never_blows_up(spec, varrho):
    assert not blow_up_time(spec, varrho).finite


@SETTINGS
@given(h4_scalar(), st.floats(1.5, 30.0), st.floats(0.01, 1.0))
def test_blow_up_time_increases_with_rho(spec, rho, d):
    a = blow_up_time(spec, rho, pattern="shift").value
    b = blow_up_time(spec, rho + d, pattern="shift").value
    assert b >= a - 1e-9


@SETTINGS
@given(st.lists(st.floats(-0.8, 0.8), min_size=4, max_size=4), st.floats(0.0, 3.0))
def test_gain_residual_and_symmetry(vals, kscale):
    a, b, c, d = vals
    H = CoefficientField.from_constants(2, 1.0, {
        (1, 1): np.eye(2), (2, 2): -2 * np.eye(2), (3, 3): -np.eye(2), (4, 4): -np.eye(2),
        (1, 3): [[a, b], [b, a]], (2, 3): [[c, 0.0], [0.0, d]], (1, 4): [[d, 0.0], [0.0, c]],
    })
    spec = HamiltonianSpec(H=H, Hbar=CoefficientField.from_constants(2, 1.0, {(2, 2): -np.eye(2)}), Q=SYM2,
                           beta=0.01)
    K = kscale * np.array([[1.0, 0.3], [0.3, 0.5]])
    L, P = solve_gain(K, 0.5, spec, 0.7)
    M = spec.H.evaluate(0.5)
    blk = lambda k, l: M[(k - 1) * 2:k * 2, (l - 1) * 2:l * 2]  # noqa: E731
    resL = (np.eye(2) - K @ blk(3, 3)) @ L - K @ (0.7 * blk(3, 1) + 0.7 * blk(3, 2) @ K)
    assert np.abs(resL).max() <= 1e-10 * (1 + np.abs(K).max()) ** 3
    assert P.shape == (2, 2)


@SETTINGS
@given(st.floats(-0.6, 0.0))
def test_trajectory_stays_symmetric_psd(varrho):
    H = CoefficientField.from_constants(2, 1.0, {
        (1, 1): [[1.0, 0.2], [0.2, 2.0]], (2, 2): -np.eye(2), (3, 3): -np.eye(2), (4, 4): -np.eye(2),
        (1, 2): [[0.1, 0.0], [0.3, -0.2]],
    })
    spec = HamiltonianSpec(H=H, Hbar=CoefficientField.from_constants(2, 1.0, {(2, 2): -np.eye(2)}), Q=SYM2,
                           beta=0.01)
    traj, _ = integrate_backward(np.zeros((2, 2)), 1.0, 0.0, spec, varrho)
    assert np.abs(traj.K - np.swapaxes(traj.K, 1, 2)).max() <= 1e-9
    assert np.linalg.eigvalsh(traj.K)[:, 0].min() >= -1e-9


@SETTINGS
@given(h4_scalar())
def test_config_roundtrip(spec):
    back = spec_from_dict(spec_to_dict(spec))
    for t in np.linspace(0.0, spec.T, 5):
        np.testing.assert_array_equal(back.H.evaluate(t), spec.H.evaluate(t))
    assert back.T == spec.T and back.beta == spec.beta


@SETTINGS
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_roundtrips_exactly(x):
    assert float(fmt(x)) == x


@SETTINGS
@given(st.floats(0.5, 3.5), st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
def test_growth_fit_recovers_power(s, b, a):
    m = np.arange(1, 11)
    fit = growth_order_fit(list(zip(m, a + b * m**s)))
    assert fit.slope == pytest.approx(s, abs=0.02)
