"""Eigenvalue search by shooting on Riccati blow-up times.

One-dimensional systems (shift pattern ``H22 - rho * Hbar22``): the primal
equation is integrated from ``(T, 0)`` to its blow-up ``t1``, the dual
equation from ``(t1, 0)`` to ``t2``, and so on.  Every link time increases
with ``rho``; the m-th eigenvalue is where the m-th odd link (counted past
those already above zero just over ``rho_b``) reaches time 0.

Multi-dimensional systems (coupling pattern, ``varrho = 1 - rho``): only
the smallest eigenvalue, where the primal blow-up time reaches 0.
"""

from dataclasses import dataclass, field
import weakref

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .coefficients import check_H4, compute_rho_b, scalar_reduction
from .errors import (
    BracketError, BudgetError, DimensionError, InconsistencyError, InputError, PreconditionError,
)
from .riccati import SWITCH_THRESHOLD, blow_up_time, integrate_backward

ROOT_TOL = 1e-8
KERNEL_REL = 1e-6
MAX_LINKS = 200
MAX_DOUBLINGS = 60


@dataclass
class EigenvalueRecord:
    """One certified eigenvalue.

    Attributes
    ----------
    m : int
        Index in the increasing sequence (1-based).
    rho : float
        Eigenvalue.
    chain : list of (float, str)
        Blow-up times ``T > t1 > t2 > ...`` with their family labels,
        computed at ``rho``.
    tol : float
        Width of the final bisection bracket in ``rho``.
    pattern : str
        ``"shift"`` (one-dimensional chain) or ``"coupling"``.
    gain_schedule : list of dict
        ``{"t0", "t1", "family"}`` intervals covering ``[0, T]`` on which
        primal or dual feedback gains drive the eigenfunction.
    kernel_basis : ndarray or None
        Orthonormal columns spanning the kernel of the dual solution at 0
        (multi-dimensional records only).
    """

    m: int
    rho: float
    chain: list
    tol: float
    pattern: str
    gain_schedule: list
    kernel_basis: np.ndarray = None
    link_index: int = None
    bracket: tuple = None
    extra: dict = field(default_factory=dict)

    @property
    def param(self):
        """Riccati parameter: ``rho`` for the shift pattern, ``1 - rho`` for coupling."""
        return self.rho if self.pattern == "shift" else 1.0 - self.rho

    def to_dict(self):
        out = {
            "m": int(self.m),
            "rho": float(self.rho),
            "chain": [{"t": float(t), "family": f} for t, f in self.chain],
            "tol": float(self.tol),
            "pattern": self.pattern,
            "gain_schedule": [dict(s) for s in self.gain_schedule],
        }
        if self.link_index is not None:
            out["link_index"] = int(self.link_index)
        if self.bracket is not None:
            out["bracket"] = [float(b) for b in self.bracket]
        if self.kernel_basis is not None:
            out["kernel_basis"] = np.asarray(self.kernel_basis).tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        try:
            kb = d.get("kernel_basis")
            return cls(
                m=int(d["m"]),
                rho=float(d["rho"]),
                chain=[(float(c["t"]), str(c["family"])) for c in d["chain"]],
                tol=float(d["tol"]),
                pattern=str(d.get("pattern", "shift")),
                gain_schedule=[{"t0": float(s["t0"]), "t1": float(s["t1"]), "family": str(s["family"])}
                               for s in d.get("gain_schedule", [])],
                kernel_basis=None if kb is None else np.asarray(kb, dtype=float),
                link_index=d.get("link_index"),
                bracket=tuple(d["bracket"]) if "bracket" in d else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed eigenvalue record: {exc}") from None


@dataclass(frozen=True)
class BlowUpChain:
    rho: float
    links: list
    truncated: bool

    def times(self):
        return np.array([t for t, _ in self.links])


# -- one-dimensional chain ----------------------------------------------------

_ONE_D = weakref.WeakKeyDictionary()


def _one_d_setup(spec):
    """Validate the one-dimensional preconditions once per spec; returns rho_b."""
    try:
        return _ONE_D[spec]
    except KeyError:
        pass
    if spec.n != 1:
        raise DimensionError(f"the blow-up chain needs n = 1, got n = {spec.n}")
    rep = check_H4(spec)
    if not rep.holds:
        raise PreconditionError(f"structural condition fails at t={rep.first_violation_t}: {rep.reason}")
    rho_b = compute_rho_b(spec)
    _ONE_D[spec] = rho_b
    return rho_b


def _chain(spec, rho, max_links, backend="auto"):
    links = []
    t_term, fam = spec.T, "primal"
    truncated = False
    while len(links) < max_links:
        r = blow_up_time(spec, rho, fam, terminal=(t_term, 0.0), pattern="shift", backend=backend)
        if not r.finite:
            truncated = True
            break
        links.append((r.value, fam))
        if r.value <= 0:
            break
        t_term, fam = r.value, "dual" if fam == "primal" else "primal"
    return BlowUpChain(float(rho), links, truncated)


def blowup_chain_1d(spec, rho, max_links=MAX_LINKS, backend="auto"):
    """Alternating primal/dual blow-up times from ``(T, 0)`` down past 0.

    Stops after the first link at or below 0, after ``max_links`` links, or
    when a link has no blow-up above the negative window (``truncated``).
    """
    rho_b = _one_d_setup(spec)
    if not rho > rho_b:
        raise PreconditionError(f"rho={rho!r} must exceed rho_b={rho_b!r}")
    return _chain(spec, rho, max_links, backend)


def _link_time(spec, rho, j, backend):
    """Time of link ``j`` (1-based) or -inf when the chain ends before it."""
    ch = _chain(spec, rho, j, backend)
    if len(ch.links) < j:
        return -np.inf, ch
    return ch.links[j - 1][0], ch


def _odd_links_above_zero(chain):
    return sum(1 for i, (t, _) in enumerate(chain.links) if i % 2 == 0 and t > 0)


def _bisect(g, lo, hi, tol):
    """Bisection on an increasing function with ``g(lo) < 0 < g(hi)``."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return lo, hi


def _schedule_1d(chain, T):
    """Alternating gain intervals split at the midpoints between chain links."""
    times = [T] + [t for t, _ in chain]
    mids = [0.5 * (a + b) for a, b in zip(times[:-1], times[1:])]
    edges = [T] + mids + [0.0]
    sched = []
    for i in range(len(edges) - 1):
        sched.append({"t0": float(edges[i + 1]), "t1": float(edges[i]),
                      "family": "primal" if i % 2 == 0 else "dual"})
    return sched[::-1]


def eigenvalue_1d(spec, m, tol=ROOT_TOL, max_links=MAX_LINKS, backend="auto"):
    """m-th eigenvalue of the one-dimensional system.

    The target link is the odd link ``j = 2 (N0 + m) - 1`` where ``N0`` is the
    number of odd links already above 0 just over ``rho_b``.  Its time is
    bracketed by doubling ``rho - rho_b`` from 1 and then bisected to ``tol``.

    Raises
    ------
    BudgetError
        If the target link index exceeds ``max_links``.
    BracketError
        If no bracket is found after 60 doublings.
    """
    if int(m) != m or m < 1:
        raise InputError(f"m must be a positive integer, got {m!r}")
    rho_b = _one_d_setup(spec)
    lo = rho_b + 1e-9 * max(1.0, abs(rho_b))
    n0 = _odd_links_above_zero(_chain(spec, lo, max_links, backend))
    j = 2 * (n0 + int(m)) - 1
    if j > max_links:
        raise BudgetError(f"eigenvalue {m} needs chain link {j}, above the budget of {max_links}")

    def g(rho):
        return _link_time(spec, rho, j, backend)[0]

    d = 1.0
    hi = rho_b + d
    for _ in range(MAX_DOUBLINGS):
        if g(hi) > 0:
            break
        lo = hi
        d *= 2
        hi = rho_b + d
    else:
        raise BracketError(f"no bracket for eigenvalue {m} up to rho={hi!r}")
    lo, hi = _bisect(g, lo, hi, tol)
    rho = 0.5 * (lo + hi)
    _, ch = _link_time(spec, rho, j, backend)
    return EigenvalueRecord(
        m=int(m), rho=rho, chain=list(ch.links), tol=hi - lo, pattern="shift",
        gain_schedule=_schedule_1d(ch.links, spec.T), link_index=j, bracket=(lo, hi),
    )


# -- multi-dimensional first eigenvalue ---------------------------------------

def _first_blowup(spec, rho, backend):
    return blow_up_time(spec, 1.0 - rho, "primal", pattern="coupling", backend=backend).value


def first_eigenvalue_multidim(spec, rho_bracket=None, tol=ROOT_TOL, split=None, backend="auto"):
    """Smallest eigenvalue of the coupling-pattern system.

    Bisects ``rho`` for the root of ``rho -> t^K(1 - rho)`` (primal blow-up
    time from ``(T, 0)``), then reads the kernel of the dual solution at
    time 0 off a switching integration at the lower bracket end.

    Parameters
    ----------
    rho_bracket : (float, float), optional
        Must straddle the root.  By default the lower end is 1 (no
        coupling, no blow-up) and the upper end ``1 + 2^k`` is found by
        doubling.
    split : float, optional
        Time where the eigenfunction gains switch from dual (below) to
        primal (above).  Default: midpoint of the window where both the
        solution and its inverse stay below the switch threshold.

    Raises
    ------
    BracketError
        If the bracket does not straddle the root.
    InconsistencyError
        If the kernel at the root is empty.
    """
    if rho_bracket is None:
        lo = 1.0
        if _first_blowup(spec, lo, backend) > 0:
            raise BracketError("blow-up above 0 already at rho = 1")
        for k in range(MAX_DOUBLINGS):
            hi = 1.0 + 2.0**k
            if _first_blowup(spec, hi, backend) > 0:
                break
            lo = hi
        else:
            raise BracketError("no blow-up above 0 found while doubling rho")
    else:
        lo, hi = map(float, rho_bracket)
        if not (lo < hi and _first_blowup(spec, lo, backend) < 0 < _first_blowup(spec, hi, backend)):
            raise BracketError(f"bracket {rho_bracket!r} does not straddle the first eigenvalue")
    lo, hi = _bisect(lambda r: _first_blowup(spec, r, backend), lo, hi, tol)
    rho = 0.5 * (lo + hi)

    traj, res = integrate_backward(np.zeros((spec.n, spec.n)), spec.T, 0.0, spec, 1.0 - lo,
                                   switching=True, backend=backend)
    if res.finite or traj.families[-1] != "dual":
        raise InconsistencyError("the solution at the lower bracket end did not pass through the dual family")
    if split is None:
        split = _default_split(traj, spec.T)
    Kt0 = traj.K[-1]
    w, V = np.linalg.eigh(Kt0)
    # when every direction degenerates (n = 1) |Kt0| alone sets no scale
    scale = max(np.abs(w).max(), np.linalg.norm(traj.value(split, "dual"), 2))
    kernel = V[:, np.abs(w) < KERNEL_REL * scale]
    if kernel.shape[1] == 0:
        raise InconsistencyError(f"empty kernel at rho={rho!r}; smallest |eigenvalue| {np.abs(w).min():.3g}")
    sched = [{"t0": 0.0, "t1": float(split), "family": "dual"},
             {"t0": float(split), "t1": float(spec.T), "family": "primal"}]
    chain = [(_first_blowup(spec, rho, backend), "primal")]
    return EigenvalueRecord(
        m=1, rho=rho, chain=chain, tol=hi - lo, pattern="coupling", gain_schedule=sched,
        kernel_basis=kernel, link_index=1, bracket=(lo, hi),
        extra={"Ktilde0_eigenvalues": w.tolist()},
    )


def _default_split(traj, T):
    ok = []
    for t, K, fam in zip(traj.grid, traj.K, traj.families):
        if fam != "primal" or t > T * (1 - 1e-12):
            continue
        w = np.abs(np.linalg.eigvalsh(K))
        if w.max() <= SWITCH_THRESHOLD and w.min() >= 1.0 / SWITCH_THRESHOLD:
            ok.append(t)
    if not ok:
        raise InconsistencyError("no time where both the solution and its inverse are moderate")
    return 0.5 * (min(ok) + max(ok))


# -- one-dimensional conditions -----------------------------------------------

@dataclass(frozen=True)
class H5Report:
    holds: bool
    lhs: float
    mid: float
    rhs: float


def check_H5(spec):
    """``4 |H11| |c0 - rho_b Hbar22| <= |2 H21 + H13^2 + H14^2|^2 < 4 / T^2`` (sup norms)."""
    if spec.n != 1:
        raise DimensionError(f"check_H5 needs n = 1, got n = {spec.n}")
    a, b, c0, hb = scalar_reduction(spec)
    rho_b = compute_rho_b(spec)
    lhs = 4 * b.sup_norm() * (c0 - hb * rho_b).sup_norm()
    mid = a.sup_norm() ** 2
    rhs = 4 / spec.T**2
    return H5Report(holds=bool(lhs <= mid < rhs), lhs=float(lhs), mid=float(mid), rhs=float(rhs))


@dataclass(frozen=True)
class NoSpectrumReport:
    holds: bool
    offending_rho: float = None
    rho_b: float = None

    def __bool__(self):
        return self.holds


def no_eigenvalue_below_rho_b(spec, samples=32, backend="auto"):
    """Check that the primal solution has no blow-up in ``[0, T]`` for ``rho`` in ``(0, rho_b]``.

    The grid is ``rho_b * k / samples`` for ``k = 1..samples``.

    Raises
    ------
    PreconditionError
        If the coefficients fail :func:`check_H5`.
    """
    rep = check_H5(spec)
    if not rep.holds:
        raise PreconditionError(f"H5 inequalities fail: {rep.lhs:.6g} <= {rep.mid:.6g} < {rep.rhs:.6g}")
    rho_b = compute_rho_b(spec)
    for k in range(1, samples + 1):
        rho = rho_b * k / samples
        if rho <= 0:
            continue
        t = blow_up_time(spec, rho, "primal", pattern="shift", backend=backend).value
        if t >= 0:
            return NoSpectrumReport(False, rho, rho_b)
    return NoSpectrumReport(True, None, rho_b)


# -- growth order --------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    """Fit ``rho_m ~ a + b (m - c)^s``; ``slope_unshifted`` is the fit with ``c = 0``."""

    slope: float
    r2: float
    a: float
    b: float
    c: float
    slope_unshifted: float
    r2_unshifted: float


def _project(m, rho, s, c):
    X = np.column_stack([np.ones_like(m), (m - c) ** s])
    coef, *_ = np.linalg.lstsq(X, rho, rcond=None)
    r = X @ coef - rho
    return float(r @ r), coef


def _best_s(m, rho, c):
    res = minimize_scalar(lambda s: _project(m, rho, s, c)[0], bounds=(0.25, 6.0), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x), float(res.fun)


def growth_order_fit(records):
    """Growth exponent of an eigenvalue sequence.

    Accepts :class:`EigenvalueRecord` objects or ``(m, rho)`` pairs with at
    least 5 consecutive indices.  The model ``a + b (m - c)^s`` is fitted by
    variable projection (``a, b`` linear, ``s, c`` searched, ``c < min m``)
    and polished by nonlinear least squares.
    """
    pairs = [(r.m, r.rho) if isinstance(r, EigenvalueRecord) else (int(r[0]), float(r[1])) for r in records]
    pairs.sort()
    if len(pairs) < 5:
        raise InputError(f"need at least 5 eigenvalues, got {len(pairs)}")
    m = np.array([p[0] for p in pairs], dtype=float)
    rho = np.array([p[1] for p in pairs])
    if np.any(np.diff(m) != 1):
        raise InputError("indices must be consecutive")
    if np.any(np.diff(rho) <= 0):
        raise InputError("eigenvalues must be strictly increasing")
    sst = float(((rho - rho.mean()) ** 2).sum())

    s0, ssr0 = _best_s(m, rho, 0.0)
    best = (ssr0, s0, 0.0)
    for c in m[0] - np.geomspace(1e-3, 50.0, 120):
        s, ssr = _best_s(m, rho, c)
        if ssr < best[0]:
            best = (ssr, s, c)
    _, s, c = best
    _, (a, b) = _project(m, rho, s, c)
    cmax = m[0] - 1e-9
    fit = least_squares(lambda p: p[0] + p[1] * (m - p[3]) ** p[2] - rho, [a, b, s, min(c, cmax - 1e-9)],
                        bounds=([-np.inf, -np.inf, 0.25, -np.inf], [np.inf, np.inf, 6.0, cmax]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    a, b, s, c = fit.x
    ssr = float((fit.fun**2).sum())
    if ssr > best[0]:
        ssr, s, c = best
        _, (a, b) = _project(m, rho, s, c)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    return GrowthFit(slope=float(s), r2=float(r2), a=float(a), b=float(b), c=float(c),
                     slope_unshifted=s0, r2_unshifted=float(1.0 - ssr0 / sst if sst > 0 else 1.0))
