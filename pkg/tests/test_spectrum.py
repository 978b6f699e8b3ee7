import numpy as np
import pytest

from hamspec import CoefficientField, HamiltonianSpec
from hamspec.errors import BracketError, BudgetError, DimensionError, InputError, PreconditionError
from hamspec.spectrum import (
    EigenvalueRecord, blowup_chain_1d, check_H5, eigenvalue_1d, first_eigenvalue_multidim, growth_order_fit,
    no_eigenvalue_below_rho_b,
)
from hamspec.riccati import blow_up_time

from conftest import SYM2, closed_form_rho, corpus, scalar_spec


# -- chain ---------------------------------------------------------------------------

def test_chain_rho_two(constant_spec):
    ch = blowup_chain_1d(constant_spec, 2.0)
    t = ch.times()
    assert t[0] == pytest.approx(np.pi / 2, abs=1e-6)
    assert t[1] == pytest.approx(0.0, abs=1e-6)
    assert [f for _, f in ch.links[:2]] == ["primal", "dual"]


def test_chain_just_above_rho_b(constant_spec):
    eps = 0.05
    ch = blowup_chain_1d(constant_spec, 1.0 + eps)
    assert len(ch.links) == 1
    assert ch.links[0][0] == pytest.approx(np.pi - np.pi / (2 * np.sqrt(eps)), abs=1e-5)


@pytest.mark.parametrize("name", ["constant_1d", "timevarying_1d", "coupled_1d", "h5_1d"])
def test_chain_strictly_decreasing(name):
    spec = corpus(name)
    for rho in (3.0, 8.0, 20.0):
        t = np.r_[spec.T, blowup_chain_1d(spec, rho).times()]
        assert np.all(np.diff(t) < 0)


def test_chain_needs_rho_above_rho_b(constant_spec):
    with pytest.raises(PreconditionError):
        blowup_chain_1d(constant_spec, 0.9)


def test_chain_rejects_multidimensional():
    with pytest.raises(DimensionError):
        blowup_chain_1d(corpus("block_2d"), 2.0)


def test_chain_links_nondecreasing_in_rho(constant_spec):
    rhos = np.linspace(2.0, 12.0, 21)
    first = [blowup_chain_1d(constant_spec, r).links[0][0] for r in rhos]
    second = [blowup_chain_1d(constant_spec, r).links[1][0] for r in rhos]
    assert np.all(np.diff(first) >= 0) and np.all(np.diff(second) >= 0)


# -- one-dimensional eigenvalues ------------------------------------------------------------

def test_closed_form_sequence(constant_records):
    for rec in constant_records:
        assert rec.rho == pytest.approx(closed_form_rho(rec.m), abs=1e-5)


def test_first_three_displayed(constant_records):
    assert [round(r.rho, 5) for r in constant_records[:3]] == [1.25, 3.25, 7.25]


def test_record_invariants(constant_records):
    for rec in constant_records:
        t = np.array([t for t, _ in rec.chain])
        assert np.all(np.diff(np.r_[np.pi, t]) < 0)
        assert abs(t[-1]) <= 10 * max(rec.tol, 1e-7)
        fams = [f for _, f in rec.chain]
        assert all(a != b for a, b in zip(fams[:-1], fams[1:]))
        assert rec.rho > 1.0


def test_root_certification_sign_flip(constant_spec, constant_records):
    for rec in constant_records[:3]:
        j = rec.link_index
        below = blowup_chain_1d(constant_spec, rec.rho - 100 * rec.tol, max_links=j)
        above = blowup_chain_1d(constant_spec, rec.rho + 100 * rec.tol, max_links=j)
        t_below = below.links[j - 1][0] if len(below.links) >= j else -np.inf
        assert t_below < 0 < above.links[j - 1][0]


@pytest.mark.parametrize("name", ["timevarying_1d", "coupled_1d", "h5_1d"])
def test_ordering_on_corpus(name):
    spec = corpus(name)
    rhos = [eigenvalue_1d(spec, m).rho for m in (1, 2, 3)]
    assert rhos[0] < rhos[1] < rhos[2]
    from hamspec import compute_rho_b
    assert rhos[0] > compute_rho_b(spec)


def test_bisection_is_deterministic(constant_spec):
    assert eigenvalue_1d(constant_spec, 2).rho == eigenvalue_1d(constant_spec, 2).rho


def test_gain_schedule_covers_horizon(constant_records):
    for rec in constant_records:
        s = rec.gain_schedule
        assert s[0]["t0"] == 0.0 and s[-1]["t1"] == pytest.approx(np.pi)
        for a, b in zip(s[:-1], s[1:]):
            assert a["t1"] == b["t0"] and a["family"] != b["family"]
        assert s[-1]["family"] == "primal"


def test_budget_error(constant_spec):
    with pytest.raises(BudgetError):
        eigenvalue_1d(constant_spec, 4, max_links=5)


def test_bad_index(constant_spec):
    with pytest.raises(InputError):
        eigenvalue_1d(constant_spec, 0)


def test_record_roundtrip(constant_records):
    rec = constant_records[2]
    back = EigenvalueRecord.from_dict(rec.to_dict())
    assert back.rho == rec.rho and back.chain == rec.chain and back.gain_schedule == rec.gain_schedule


def test_malformed_record():
    with pytest.raises(InputError):
        EigenvalueRecord.from_dict({"m": 1})


# -- multi-dimensional first eigenvalue ----------------------------------------------------

def test_multidim_matches_scalar_chain(constant_spec, constant_records):
    rec = first_eigenvalue_multidim(constant_spec)
    assert rec.rho == pytest.approx(constant_records[0].rho, abs=1e-6)
    assert rec.kernel_basis.shape == (1, 1)


def test_multidim_block_diagonal():
    spec = corpus("block_2d")
    rec = first_eigenvalue_multidim(spec)
    # brute force on each decoupled scalar component
    comps = [eigenvalue_1d(scalar_spec(blocks={(1, 1): c}), 1).rho for c in (1.0, 2.0)]
    assert rec.rho == pytest.approx(min(comps), abs=1e-5)
    assert rec.kernel_basis.shape == (2, 1)
    # the binding component is the second one
    assert abs(rec.kernel_basis[1, 0]) == pytest.approx(1.0, abs=1e-6)


def test_bounded_just_below_first_eigenvalue(constant_spec):
    rec = first_eigenvalue_multidim(constant_spec)
    res = blow_up_time(constant_spec, 1.0 - (rec.rho - 10 * rec.tol - 1e-7), pattern="coupling")
    assert res.value < 0


def test_multidim_bad_bracket(constant_spec):
    with pytest.raises(BracketError):
        first_eigenvalue_multidim(constant_spec, rho_bracket=(2.0, 3.0))


def test_multidim_explicit_bracket(constant_spec):
    rec = first_eigenvalue_multidim(constant_spec, rho_bracket=(1.0, 2.0))
    assert rec.rho == pytest.approx(1.25, abs=1e-6)


# -- H5 and the empty region below rho_b ----------------------------------------------------

def h5_spec(T):
    H = CoefficientField.from_constants(1, T, {(1, 1): 0.01, (1, 2): 0.5, (2, 2): -1.0, (3, 3): -1.0, (4, 4): -1.0})
    return HamiltonianSpec(H=H, Hbar=CoefficientField.from_constants(1, T, {(2, 2): -1.0}), Q=SYM2, beta=0.01)


def test_H5_small_coefficients():
    rep = check_H5(h5_spec(1.0))
    assert rep.holds
    assert rep.mid == pytest.approx(1.0) and rep.rhs == pytest.approx(4.0)
    assert rep.lhs <= rep.mid


def test_H5_long_horizon_fails():
    rep = check_H5(h5_spec(10.0))
    assert not rep.holds
    assert rep.rhs == pytest.approx(0.04)


def test_H5_report_on_constant_family(constant_spec):
    rep = check_H5(constant_spec)
    assert rep.lhs == pytest.approx(0.0)
    assert rep.mid == pytest.approx(0.0)
    assert rep.holds


def test_no_eigenvalue_below_rho_b():
    spec = corpus("h5_1d")
    assert no_eigenvalue_below_rho_b(spec, samples=32)


def test_no_eigenvalue_gate():
    with pytest.raises(PreconditionError):
        no_eigenvalue_below_rho_b(h5_spec(10.0))


def test_rho_b_itself_has_no_blow_up():
    spec = corpus("h5_1d")
    assert blow_up_time(spec, 1.0, pattern="shift").value < 0


# -- growth fit -----------------------------------------------------------------------------

def test_growth_closed_form():
    fit = growth_order_fit([(m, closed_form_rho(m)) for m in range(1, 11)])
    assert fit.slope == pytest.approx(2.0, abs=0.02)
    assert fit.r2 > 0.9999


def test_growth_linear_control():
    fit = growth_order_fit([(m, float(m)) for m in range(1, 11)])
    assert fit.slope == pytest.approx(1.0, abs=0.02)


def test_growth_from_records(constant_records):
    assert growth_order_fit(constant_records).slope == pytest.approx(2.0, abs=0.02)


def test_growth_rejects_non_monotone():
    with pytest.raises(InputError):
        growth_order_fit([(1, 1.0), (2, 3.0), (3, 2.0), (4, 5.0), (5, 6.0)])


def test_growth_needs_five():
    with pytest.raises(InputError):
        growth_order_fit([(m, float(m)) for m in range(1, 5)])
