import numpy as np
import pytest

from hamspec import CoefficientField, HamiltonianSpec, PiecewisePoly, check_H4, check_monotonicity, compute_rho_b
from hamspec.coefficients import dual_transform, evaluate, scalar_reduction, signed_matrix
from hamspec.errors import AssumptionError, DomainError, InputError

from conftest import SYM2, scalar_spec


def linear(v0, v1, T=1.0):
    """Scalar linear piece from v0 at 0 to v1 at T."""
    return PiecewisePoly([0.0, T], [[[[v0]], [[(v1 - v0) / T]]]])


def test_evaluate_constant_diagonal():
    H = CoefficientField.from_constants(1, 1.0, {(1, 1): 1.0, (2, 2): -1.0, (3, 3): -1.0, (4, 4): -1.0})
    np.testing.assert_array_equal(evaluate(H, 0.3), np.diag([1.0, -1.0, -1.0, -1.0]))


def test_evaluate_symmetry_link():
    H = CoefficientField(1, 1.0, {(1, 2): linear(0.0, 1.0)})
    M = H.evaluate(0.5)
    assert M[0, 1] == pytest.approx(0.5) and M[1, 0] == pytest.approx(0.5)
    np.testing.assert_array_equal(M, M.T)


def test_evaluate_continuous_at_breakpoint():
    p = PiecewisePoly([0.0, 0.5, 1.0], [[[[0.0]], [[2.0]]], [[[1.0]], [[-2.0]]]])
    H = CoefficientField(1, 1.0, {(1, 1): p})
    left = H.evaluate(0.5 - 1e-12)[0, 0]
    right = H.evaluate(0.5 + 1e-12)[0, 0]
    assert H.evaluate(0.5)[0, 0] == pytest.approx(1.0)
    assert left == pytest.approx(right, abs=1e-10)


def test_discontinuous_field_rejected():
    with pytest.raises(InputError, match="discontinuous"):
        PiecewisePoly([0.0, 0.5, 1.0], [[[[0.0]]], [[[1.0]]]])


def test_evaluate_outside_horizon():
    H = CoefficientField.from_constants(1, 1.0, {(1, 1): 1.0})
    with pytest.raises(DomainError):
        H.evaluate(1.5)
    np.testing.assert_array_equal(H.at(1.5), H.evaluate(1.0))


def test_block_34_is_zero():
    H = CoefficientField.from_constants(2, 1.0, {(3, 3): -np.eye(2), (4, 4): -np.eye(2)})
    np.testing.assert_array_equal(H.block_at(3, 4, 0.2), np.zeros((2, 2)))
    with pytest.raises(InputError):
        CoefficientField.from_constants(1, 1.0, {(3, 4): 1.0})


def test_generator_rows_must_sum_to_zero():
    H = CoefficientField.from_constants(1, 1.0, {(3, 3): -1.0, (4, 4): -1.0})
    with pytest.raises(InputError):
        HamiltonianSpec(H=H, Hbar=CoefficientField(1, 1.0), Q=[[-1.0, 0.5], [1.0, -1.0]], beta=1.0)


def test_delta_bracket_checked():
    H = CoefficientField.from_constants(1, 1.0, {(3, 3): -1.0, (4, 4): -3.0})
    spec = HamiltonianSpec(H=H, Hbar=CoefficientField(1, 1.0), Q=SYM2, beta=1.0)
    assert spec.delta == pytest.approx(1.0) and spec.delta1 == pytest.approx(3.0)
    with pytest.raises(InputError):
        HamiltonianSpec(H=H, Hbar=CoefficientField(1, 1.0), Q=SYM2, beta=1.0, delta=1.5, delta1=4.0)


# -- monotonicity ----------------------------------------------------------------

def test_monotonicity_diagonal_margin_zero():
    rep = check_monotonicity(scalar_spec(T=1.0))
    assert rep.satisfied
    assert rep.margin == pytest.approx(0.0, abs=1e-14)


def test_monotonicity_sign_flip_fails():
    rep = check_monotonicity(scalar_spec(T=1.0, blocks={(1, 1): -1.0}))
    assert not rep.satisfied
    assert rep.max_eigenvalue == pytest.approx(1.0)


def test_monotonicity_matches_dense_oracle():
    rng = np.random.default_rng(3)
    n, T = 2, 1.0
    blocks = {}
    for k, l in [(1, 1), (1, 2), (1, 3), (2, 2), (2, 4)]:
        a, b = rng.normal(size=(2, n, n)) * 0.3
        if k == l:
            a, b = a + a.T, b + b.T
        blocks[k, l] = PiecewisePoly([0.0, T], np.stack([a, (b - a) / T])[None])
    for k in (3, 4):
        blocks[k, k] = PiecewisePoly.constant(-2.0 * np.eye(n), 0.0, T)
    H = CoefficientField(n, T, blocks)
    spec = HamiltonianSpec(H=H, Hbar=CoefficientField(n, T), Q=SYM2, beta=0.1)
    # independent oracle: the top eigenvalue of a matrix that is affine in t is
    # convex in t, so the endpoints of any sample set containing 0 and T attain it
    ts = np.linspace(0.0, T, 50)
    oracle = []
    for t in ts:
        S = signed_matrix(H.evaluate(t), n)
        oracle.append(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])
    rep = check_monotonicity(spec)
    assert rep.max_eigenvalue == pytest.approx(max(oracle), abs=1e-10)
    assert rep.margin == pytest.approx(-0.1 - max(oracle), abs=1e-10)


# -- structural condition ------------------------------------------------------

def test_H4_passes_on_identity():
    # H22 = -3 keeps the (2,3) coupling inside the monotonicity condition
    spec = scalar_spec(T=1.0, blocks={(1, 3): 1.0, (2, 3): 1.0, (2, 2): -3.0}, beta=0.5)
    rep = check_H4(spec)
    assert rep.holds, rep.reason


def test_H4_fails_on_mismatch():
    spec = scalar_spec(T=1.0, blocks={(1, 3): 1.0, (2, 3): 0.5}, beta=0.1)
    rep = check_H4(spec)
    assert not rep.holds
    assert rep.reason == "H23 != -H33*H13"
    assert rep.first_violation_t == pytest.approx(0.0)


def test_H4_piecewise_linear_identity():
    T = 1.0
    H = CoefficientField(1, T, {
        (1, 1): PiecewisePoly.constant([[1.0]], 0, T), (2, 2): PiecewisePoly.constant([[-3.0]], 0, T),
        (3, 3): PiecewisePoly.constant([[-1.0]], 0, T), (4, 4): PiecewisePoly.constant([[-1.0]], 0, T),
        (1, 3): linear(0.0, 1.0), (2, 3): linear(0.0, 1.0),
    })
    spec = HamiltonianSpec(H=H, Hbar=CoefficientField.from_constants(1, T, {(2, 2): -1.0}), Q=SYM2, beta=0.5)
    rep = check_H4(spec)
    assert rep.holds, rep.reason


# -- dual transform --------------------------------------------------------------

def test_dual_diagonal_formula():
    spec = scalar_spec(T=1.0, blocks={(1, 1): 2.0, (2, 2): -3.0, (3, 3): -0.5, (4, 4): -4.0})
    D = dual_transform(spec, 1.0).evaluate(0.4)
    assert D[0, 0] == pytest.approx(3.0)
    assert D[1, 1] == pytest.approx(-2.0)
    assert D[2, 2] == pytest.approx(-2.0)
    assert D[3, 3] == pytest.approx(-0.25)


def test_dual_of_dual_is_identity():
    spec = scalar_spec(T=1.0, blocks={(1, 2): 0.2, (1, 3): 0.3, (2, 3): 0.3, (1, 4): -0.2, (2, 4): 0.1,
                                      (3, 3): -1.5, (4, 4): -2.0})
    d1 = dual_transform(spec, 1.0)
    spec1 = HamiltonianSpec(H=d1, Hbar=CoefficientField(1, 1.0), Q=SYM2, beta=1.0)
    d2 = dual_transform(spec1, 1.0)
    for t in (0.0, 0.37, 1.0):
        np.testing.assert_allclose(d2.evaluate(t), spec.H.evaluate(t), atol=1e-12)


def test_dual_at_zero_coupling_has_no_mixed_blocks():
    spec = scalar_spec(T=1.0, blocks={(1, 3): 0.3, (2, 3): 0.3, (1, 4): 0.2, (2, 4): 0.2})
    D = dual_transform(spec, 0.0)
    for k, l in [(1, 3), (1, 4), (2, 3), (2, 4)]:
        assert D.block_at(k, l, 0.5) == pytest.approx(np.zeros((1, 1)))
        assert D.block_at(l, k, 0.5) == pytest.approx(np.zeros((1, 1)))


def test_dual_of_time_varying_field_is_refit():
    T = 1.0
    H = CoefficientField(1, T, {(1, 1): linear(1.0, 2.0), (2, 2): PiecewisePoly.constant([[-1.0]], 0, T),
                                (3, 3): PiecewisePoly.constant([[-1.0]], 0, T),
                                (4, 4): PiecewisePoly.constant([[-1.0]], 0, T)})
    spec = HamiltonianSpec(H=H, Hbar=CoefficientField(1, T), Q=SYM2, beta=1.0)
    D = dual_transform(spec, 1.0)
    for t in np.linspace(0, T, 7):
        assert D.block_at(2, 2, t)[0, 0] == pytest.approx(-(1.0 + t), abs=1e-12)


# -- rho_b ------------------------------------------------------------------------

def test_rho_b_with_coupling_block():
    spec = scalar_spec(T=1.0, blocks={(2, 2): -2.0, (1, 3): 1.0, (2, 3): 1.0}, beta=0.1)
    assert compute_rho_b(spec) == pytest.approx(1.0)


def test_rho_b_half():
    assert compute_rho_b(scalar_spec(T=1.0, hbar=-2.0)) == pytest.approx(0.5)


def test_rho_b_time_varying():
    T = 1.0
    H = CoefficientField(1, T, {(1, 1): PiecewisePoly.constant([[1.0]], 0, T), (2, 2): linear(-1.0, -2.0),
                                (3, 3): PiecewisePoly.constant([[-1.0]], 0, T),
                                (4, 4): PiecewisePoly.constant([[-1.0]], 0, T)})
    spec = HamiltonianSpec(H=H, Hbar=CoefficientField.from_constants(1, T, {(2, 2): -1.0}), Q=SYM2, beta=1.0)
    assert compute_rho_b(spec) == pytest.approx(2.0)


def test_rho_b_needs_negative_hbar():
    with pytest.raises(AssumptionError):
        compute_rho_b(scalar_spec(T=1.0, hbar=0.0))


def test_scalar_reduction_terms():
    spec = scalar_spec(T=1.0, blocks={(1, 2): 0.25, (1, 3): 0.5, (2, 3): 0.5, (2, 2): -2.0})
    a, b, c0, hb = (p(0.3)[0, 0] for p in scalar_reduction(spec))
    assert a == pytest.approx(2 * 0.25 + 0.25)
    assert b == pytest.approx(1.0)
    assert c0 == pytest.approx(-2.0 + 0.25)
    assert hb == pytest.approx(-1.0)
