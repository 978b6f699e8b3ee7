"""Acceptance criteria 1-11, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from hamspec import compute_rho_b
from hamspec.cli import main as cli_main
from hamspec.riccati import blow_up_time, closed_form_k1, integrate_backward, rhs_dual
from hamspec.spectrum import (
    blowup_chain_1d, check_H5, eigenvalue_1d, first_eigenvalue_multidim, growth_order_fit, no_eigenvalue_below_rho_b,
)
from hamspec.stochastic import compensated_increments, sample_chain, simulate_eigenfunction

from conftest import DATA, SYM2, closed_form_rho, corpus, scalar_spec


@pytest.fixture
def report(capsys):
    def emit(n, checks):
        """``checks`` is a list of (label, ok, detail)."""
        ok = all(c[1] for c in checks)
        failed = [c for c in checks if not c[1]]
        shown = failed or checks
        detail = "; ".join(f"{label}: {d}" for label, _, d in shown)
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def test_criterion_01_tangent_oracle(report):
    t0 = time.perf_counter()
    t_star = blow_up_time(scalar_spec(T=2.0), 2.0, pattern="shift").value
    traj, _ = integrate_backward(0.0, 1.0, 0.0, scalar_spec(T=1.0), 2.0, pattern="shift")
    k0 = traj.K[-1, 0, 0]
    dt = time.perf_counter() - t0
    report(1, [
        ("blow-up", abs(t_star - (2 - np.pi / 2)) <= 1e-6, f"|t* - (2 - pi/2)| = {abs(t_star - (2 - np.pi / 2)):.2e}"),
        ("k(0)", abs(k0 - np.tan(1.0)) <= 1e-8, f"|k(0) - tan 1| = {abs(k0 - np.tan(1.0)):.2e}"),
        ("runtime", dt < 1.0, f"{dt:.3f} s"),
    ])


def test_criterion_02_closed_form_sequence(report):
    spec = corpus("constant_1d")
    t0 = time.perf_counter()
    recs = [eigenvalue_1d(spec, m) for m in range(1, 6)]
    dt = time.perf_counter() - t0
    err = max(abs(r.rho - closed_form_rho(r.m)) for r in recs)
    report(2, [("max error m=1..5", err <= 1e-5, f"{err:.2e}"), ("runtime", dt < 30.0, f"{dt:.2f} s")])


def test_criterion_03_growth_law(report):
    const = corpus("constant_1d")
    s_const = growth_order_fit([eigenvalue_1d(const, m) for m in range(1, 11)]).slope
    tv = corpus("timevarying_1d")
    s_tv = growth_order_fit([eigenvalue_1d(tv, m) for m in range(1, 11)]).slope
    report(3, [
        ("constant family", abs(s_const - 2.0) <= 0.05, f"exponent {s_const:.4f}"),
        ("time-varying", 1.8 <= s_tv <= 2.2, f"exponent {s_tv:.4f}"),
    ])


def test_criterion_04_envelope(report):
    checks = []
    for name in ("coupled_1d", "timevarying_1d", "block_2d"):
        spec = corpus(name)
        n = spec.n
        worst, blew = np.inf, False
        for vr in (0.0, 0.25, 0.5, 0.75, 1.0):
            traj, res = integrate_backward(np.zeros((n, n)), spec.T, 0.0, spec, vr)
            blew |= res.finite
            k1 = closed_form_k1(vr, traj.grid, spec)
            w = np.linalg.eigvalsh(traj.K)
            worst = min(worst, w[:, 0].min(), (k1 - w[:, -1]).min())
        checks.append((name, worst >= -1e-7 and not blew, f"slack {worst:.2e}, blow-up {blew}"))
    report(4, checks)


def test_criterion_05_blow_up_monotonicity(report):
    spec = corpus("constant_1d")
    grid = np.linspace(1.05, 10.0, 50)
    tk = np.array([blow_up_time(spec, r, pattern="shift").value for r in grid])
    rho_big = 1 + 1.1 * (np.pi / 0.02) ** 2
    t_big = blow_up_time(spec, rho_big, pattern="shift").value
    dual_grid = np.linspace(3.0, 12.0, 50)
    td = np.array([blowup_chain_1d(spec, r, max_links=2).links[1][0] for r in dual_grid])
    report(5, [
        ("primal nondecreasing", np.all(np.diff(tk) >= 0), f"min step {np.diff(tk).min():.2e}"),
        ("limit", t_big > spec.T - 0.01, f"t^k = {t_big:.6f} at rho = {rho_big:.1f}"),
        ("dual nondecreasing", np.all(np.diff(td) >= 0), f"min step {np.diff(td).min():.2e}"),
    ])


def test_criterion_06_duality_residual(report):
    h = 1e-4
    checks = []
    for name, vr in (("coupled_1d", -0.1), ("timevarying_1d", -0.1), ("block_2d", -0.05)):
        spec = corpus(name)
        n = spec.n
        traj, _ = integrate_backward(np.zeros((n, n)), spec.T, 0.0, spec, vr, max_step=0.01)
        worst = 0.0
        for t in np.linspace(0.3 * spec.T, 0.7 * spec.T, 9):
            inv = lambda s: np.linalg.inv(traj.at(s)[0])  # noqa: E731
            Kt = inv(t)
            fd = (inv(t + h) - inv(t - h)) / (2 * h)
            # rhs_dual returns -dKtilde/dt
            r = np.abs(rhs_dual(Kt, t, spec, vr) + fd).max() / max(1.0, np.abs(fd).max())
            worst = max(worst, r)
        checks.append((name, worst <= 1e-5, f"residual {worst:.2e}"))
    report(6, checks)


def test_criterion_07_first_eigenvalue(report):
    spec = corpus("block_2d")
    rec = first_eigenvalue_multidim(spec)
    comps = [eigenvalue_1d(scalar_spec(blocks={(1, 1): c}), 1).rho for c in (1.0, 2.0)]
    err = abs(rec.rho - min(comps))
    dim = rec.kernel_basis.shape[1]
    report(7, [("rho", err <= 1e-5, f"rho = {rec.rho:.9f}, error {err:.2e}"), ("kernel", dim == 1, f"dimension {dim}")])


def test_criterion_08_eigenfunction_residuals(report):
    spec = corpus("constant_1d")
    rec = eigenvalue_1d(spec, 1)
    t0 = time.perf_counter()
    _, coarse = simulate_eigenfunction(rec, spec, 1000, 2024)
    _, fine = simulate_eigenfunction(rec, spec, 1000, 2024, grid_dt=spec.T / 8192)
    dt = time.perf_counter() - t0
    q = fine.yT_ratio / coarse.yT_ratio
    report(8, [
        ("x0", coarse.x0 == 0.0 and fine.x0 == 0.0, f"x0 = {coarse.x0}"),
        ("terminal ratio", coarse.yT_ratio <= 0.02, f"{coarse.yT_ratio:.2e}"),
        ("halving", 0.35 <= q <= 0.65, f"ratio(dt/2) / ratio(dt) = {q:.3f}"),
        ("decoupling", fine.decouple_max < coarse.decouple_max,
         f"{coarse.decouple_max:.2e} -> {fine.decouple_max:.2e}"),
        ("nontrivial", coarse.nontriviality > 0, f"E sup|x| = {coarse.nontriviality:.3f}"),
        ("runtime", dt < 120.0, f"{dt:.1f} s"),
    ])


def test_criterion_09_martingale(report):
    rng = np.random.default_rng(2024)
    grid = np.linspace(0.0, 1.0, 101)
    v = np.array([compensated_increments(sample_chain(SYM2, 1, 1.0, rng), grid).Vtilde[-1] for _ in range(10_000)])
    se = v.std(ddof=1) / np.sqrt(v.size)
    report(9, [("E[V~_T]", abs(v.mean()) <= 3 * se, f"mean {v.mean():.4f}, se {se:.4f}")])


def test_criterion_10_no_spectrum_below_rho_b(report):
    spec = corpus("h5_1d")
    h5 = check_H5(spec)
    rho_b = compute_rho_b(spec)
    res = no_eigenvalue_below_rho_b(spec, samples=32)
    report(10, [
        ("H5", h5.holds, f"{h5.lhs:.3g} <= {h5.mid:.3g} < {h5.rhs:.3g}"),
        ("no blow-up", bool(res), f"32 samples in (0, {rho_b:g}], offending rho {res.offending_rho}"),
    ])


def test_criterion_11_determinism(report, tmp_path):
    argv = ["--seed", "7", "pipeline", "--config", str(DATA / "constant_1d.json"), "--count", "5",
            "--paths", "100", "--csv-paths", "2"]
    codes = [cli_main(["--out-dir", str(tmp_path / d), *argv]) for d in ("a", "b")]
    a, b = tmp_path / "a", tmp_path / "b"
    names = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
    same = [n for n in names if (a / n).read_bytes() == (b / n).read_bytes()]
    report(11, [
        ("exit codes", codes == [0, 0], str(codes)),
        ("bytes", same == names and names == sorted(p.name for p in b.iterdir() if p.name != "manifest.json"),
         f"{len(same)}/{len(names)} files identical"),
    ])


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([str(Path(__file__)), "-q"]))
