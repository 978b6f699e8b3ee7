"""Backward integration of the generalized Riccati system and its dual.

Both families are written as one generic matrix equation

    -K' = K H21 + H12 K + H11 + K H22 K + (K H23 + H13) L + (K H24 + H14) P,
    (I - K H33) L = K (H31 + H32 K),   (I - K H44) P = K (H41 + H42 K),

evaluated with the coefficient matrix of the family: the perturbed matrix
for the primal family and its dual transform for the dual family.  With the
``"coupling"`` pattern the perturbed matrix scales the coupling blocks by
``varrho`` (which yields the ``varrho`` and ``varrho**2`` weights); with the
``"shift"`` pattern it replaces ``H22`` by ``H22 - rho * Hbar22``.

Blow-up handling has two modes.  The plain mode stops once the spectral
norm passes a cap and extrapolates ``1/|K|`` linearly to its zero.  The
switching mode inverts ``K`` when its norm passes a threshold, continues in
the partner family (the inverse of a solution of one family solves the
other) and reports the blow-up where an eigenvalue of the partner variable
crosses zero.  The crossing is localised on the Hermite dense output, which
is far sharper than extrapolation, so :func:`blow_up_time` uses it.
"""

from dataclasses import dataclass, field
import weakref

import numpy as np
from scipy.optimize import brentq

from . import _scalar_kernel as sk
from ._dopri import (
    A21, A31, A32, A41, A42, A43, A51, A52, A53, A54, A61, A62, A63, A64, A65,
    B1, B3, B4, B5, B6, C2, C3, C4, C5, E1, E3, E4, E5, E6, E7,
    MAX_FACTOR, MIN_FACTOR, SAFETY,
)
from .coefficients import (
    PATTERNS, blocks_of, dual_matrix, perturbed_matrix, scalar_reduction,
)
from .errors import InputError, NearSingularityError, NumericalFailure

NEG_INFINITY = float("-inf")
FAMILIES = ("primal", "dual")

RTOL = 1e-9
ATOL = 1e-12
BLOWUP_CAP = 1e8
SWITCH_THRESHOLD = 1e4
GAIN_COND_MAX = 1e12
MAX_STEPS = 200_000


def _family_index(family):
    try:
        return FAMILIES.index(family)
    except ValueError:
        raise InputError(f"family must be 'primal' or 'dual', got {family!r}") from None


def _check_pattern(pattern):
    if pattern not in PATTERNS:
        raise InputError(f"unknown perturbation pattern {pattern!r}")


@dataclass(frozen=True)
class BlowUpResult:
    """Blow-up time of one backward integration.

    ``value`` is ``NEG_INFINITY`` when the window end was reached without a
    blow-up; ``bracket`` is then ``(NEG_INFINITY, window_end)``.
    """

    value: float
    bracket: tuple
    norm_at_stop: float
    parameter: float
    family: str = "primal"
    method: str = "none"

    @property
    def finite(self):
        return bool(np.isfinite(self.value))


@dataclass(eq=False)
class RiccatiTrajectory:
    """Accepted nodes of a backward Riccati integration.

    Attributes
    ----------
    grid : ndarray, shape (N,)
        Node times, non-increasing.  A node is repeated where the switching
        mode changed family.
    K, dK : ndarray, shape (N, n, n)
        Solution and its time derivative at each node.
    families : ndarray of str, shape (N,)
        Family of ``K`` at each node.
    L, P : ndarray, shape (N, n, n)
        Algebraic gains at each node (NaN where ``I - K H33`` is singular).
    """

    grid: np.ndarray
    K: np.ndarray
    dK: np.ndarray
    families: np.ndarray
    direction: str
    param: float
    pattern: str
    stop_reason: str
    spec: object = field(repr=False)
    L: np.ndarray = field(default=None, repr=False)
    P: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.L is None:
            n = self.K.shape[1]
            self.L = np.full_like(self.K, np.nan)
            self.P = np.full_like(self.K, np.nan)
            coef = {f: _FamilyCoefficients(self.spec, self.param, self.pattern, f) for f in FAMILIES}
            for i, (t, K, fam) in enumerate(zip(self.grid, self.K, self.families)):
                try:
                    self.L[i], self.P[i] = _gains(K, coef[fam](t), t, n)
                except NearSingularityError:
                    pass

    @property
    def varrho_or_rho(self):
        return self.param

    @property
    def n(self):
        return self.K.shape[1]

    def __len__(self):
        return self.grid.size

    def _segment(self, t):
        g = self.grid
        if not (g[-1] - 1e-12 * max(1.0, abs(g[0])) <= t <= g[0] + 1e-12 * max(1.0, abs(g[0]))):
            raise InputError(f"t={t!r} outside the trajectory window [{g[-1]}, {g[0]}]")
        # first step whose left end is at or below t
        i = int(np.searchsorted(-g, -t, side="left"))
        i = min(max(i, 1), g.size - 1)
        while i < g.size - 1 and g[i - 1] == g[i]:
            i += 1
        return i - 1, i

    def at(self, t):
        """Dense output ``(K, family)`` by cubic Hermite interpolation."""
        i, j = self._segment(t)
        g = self.grid
        h = g[j] - g[i]
        if h == 0:
            return self.K[j].copy(), self.families[j]
        th = (t - g[i]) / h
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = th**3 - 2 * th**2 + th
        h01 = -2 * th**3 + 3 * th**2
        h11 = th**3 - th**2
        K = h00 * self.K[i] + h10 * h * self.dK[i] + h01 * self.K[j] + h11 * h * self.dK[j]
        return 0.5 * (K + np.swapaxes(K, -1, -2)), self.families[j]

    def value(self, t, family=None):
        """Solution at ``t`` expressed in ``family`` (inverting if needed)."""
        K, fam = self.at(t)
        if family is None or family == fam:
            return K
        return np.linalg.inv(K)


class _FamilyCoefficients:
    """Block view of the coefficient matrix of one family; constant fields are cached."""

    def __init__(self, spec, param, pattern, family):
        _check_pattern(pattern)
        self.spec = spec
        self.param = float(param)
        self.pattern = pattern
        self.family = family
        self.n = spec.n
        self.constant = spec.H.is_constant and (pattern != "shift" or spec.Hbar.is_constant)
        self._cached = None

    def matrix(self, t):
        M = perturbed_matrix(self.spec, t, self.param, self.pattern, clamp=True)
        if self.family == "dual":
            M = dual_matrix(M, self.n, t)
        return M

    def __call__(self, t):
        if self.constant:
            if self._cached is None:
                self._cached = blocks_of(self.matrix(0.0), self.n)
            return self._cached
        return blocks_of(self.matrix(t), self.n)


def _gains(K, b, t, n):
    eye = np.eye(n)
    A0 = eye - K @ b[3, 3]
    A1 = eye - K @ b[4, 4]
    if np.linalg.cond(A0) > GAIN_COND_MAX or np.linalg.cond(A1) > GAIN_COND_MAX:
        raise NearSingularityError("I - K H33 or I - K H44 is numerically singular", t=t)
    L = np.linalg.solve(A0, K @ (b[3, 1] + b[3, 2] @ K))
    P = np.linalg.solve(A1, K @ (b[4, 1] + b[4, 2] @ K))
    return L, P


def _rhs(K, b, t, n):
    L, P = _gains(K, b, t, n)
    R = (K @ b[2, 1] + b[1, 2] @ K + b[1, 1] + K @ b[2, 2] @ K
         + (K @ b[2, 3] + b[1, 3]) @ L + (K @ b[2, 4] + b[1, 4]) @ P)
    return 0.5 * (R + R.T)


def _as_matrix(K, n, name="K"):
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = K.reshape(1, 1)
    if K.shape != (n, n):
        raise InputError(f"{name} must be {n}x{n}, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise InputError(f"{name} must be finite")
    if np.abs(K - K.T).max() > 1e-12 * (1.0 + np.abs(K).max()):
        raise InputError(f"{name} must be symmetric")
    return 0.5 * (K + K.T)


def solve_gain(K, t, spec, varrho, pattern="coupling", family="primal"):
    """Algebraic gains ``L = F0(K)[H31 + H32 K]`` and ``P = F1(K)[H41 + H42 K]``.

    ``F0(K) = (I - K H33)^{-1} K`` and ``F1(K) = (I - K H44)^{-1} K`` with the
    blocks of the (perturbed, possibly dual) coefficient matrix at ``t``.

    Raises
    ------
    NearSingularityError
        If ``I - K H33`` or ``I - K H44`` has condition number above 1e12.
    """
    _family_index(family)
    K = _as_matrix(K, spec.n)
    return _gains(K, _FamilyCoefficients(spec, varrho, pattern, family)(t), t, spec.n)


def rhs_primal(K, t, spec, varrho, pattern="coupling"):
    """Right-hand side ``-dK/dt`` of the primal Riccati equation (symmetrised)."""
    K = _as_matrix(K, spec.n)
    return _rhs(K, _FamilyCoefficients(spec, varrho, pattern, "primal")(t), t, spec.n)


def rhs_dual(Ktilde, t, spec, varrho, pattern="coupling"):
    """Right-hand side ``-dKtilde/dt`` of the dual Riccati equation."""
    K = _as_matrix(Ktilde, spec.n, "Ktilde")
    return _rhs(K, _FamilyCoefficients(spec, varrho, pattern, "dual")(t), t, spec.n)


def rhs_scalar(k, t, spec, rho, family="primal"):
    """Reduced one-dimensional right-hand side (shift pattern, structural condition assumed).

    ``-k' = a k + b + (c0 - rho hbar) k^2`` for the primal family and
    ``-k' = -a k - b k^2 - (c0 - rho hbar)`` for the dual one.
    """
    a, b, c0, hb = (p(t, clamp=True)[0, 0] for p in scalar_reduction(spec))
    c = c0 - rho * hb
    if _family_index(family) == 0:
        return a * k + b + c * k * k
    return -a * k - b * k * k - c


# -- scalar fast path ---------------------------------------------------------

_SCALAR_TABLES = weakref.WeakKeyDictionary()


def _scalar_tables(spec):
    """Coefficient table ``(breaks, tab)`` of the reduced scalar equation, or None.

    None means the fast path does not apply (``n != 1`` or the structural
    part of the one-dimensional assumption fails, so the reduction is not
    exact).
    """
    try:
        return _SCALAR_TABLES[spec]
    except KeyError:
        pass
    out = None
    if spec.n == 1:
        H = spec.H
        g3 = H.block(2, 3) + H.block(3, 3) @ H.block(1, 3)
        g4 = H.block(2, 4) + H.block(4, 4) @ H.block(1, 4)
        scale = 1.0 + np.abs(H.poly.coeffs).max()
        if np.abs(g3.coeffs).max() <= 1e-12 * scale and np.abs(g4.coeffs).max() <= 1e-12 * scale:
            polys = scalar_reduction(spec)
            grid = polys[0].breaks
            for p in polys[1:]:
                grid = np.union1d(grid, p.breaks)
            deg = max(p.degree for p in polys)
            tab = np.stack([p.with_degree(deg).refine(grid).coeffs[:, :, 0, 0] for p in polys], axis=-1)
            out = (np.ascontiguousarray(grid), np.ascontiguousarray(tab))
    _SCALAR_TABLES[spec] = out
    return out


def _use_kernel(spec, pattern, backend):
    if backend == "generic":
        return None
    tables = _scalar_tables(spec) if pattern == "shift" else None
    if backend == "kernel" and tables is None:
        raise InputError("the scalar kernel needs n = 1, the shift pattern and H23 = -H33 H13, H24 = -H44 H14")
    return tables


def _run_kernel(tables, rho, fam, u0, t0, t_stop, rtol, atol, cap, switch, switching,
                h_min, h_max, max_steps, store):
    breaks, tab = tables
    size = 2 * max_steps + 2 if store else 1
    out_t, out_u, out_f = np.empty(size), np.empty(size), np.empty(size)
    out_mode = np.empty(size, dtype=np.int64)
    res = sk.integrate_scalar(breaks, tab, float(rho), int(fam), float(u0), float(t0), float(t_stop),
                              float(rtol), float(atol), float(cap), float(switch), bool(switching),
                              float(h_min), float(h_max), int(max_steps), bool(store),
                              out_t, out_u, out_f, out_mode)
    status, t_star, t_lo, t_hi, nrm, u_last, mode_last, k = res
    nodes = None
    if store:
        nodes = (out_t[:k].copy(), out_u[:k].reshape(-1, 1, 1).copy(),
                 out_f[:k].reshape(-1, 1, 1).copy(), out_mode[:k].copy())
    return int(status), float(t_star), float(t_lo), float(t_hi), float(nrm), nodes


# -- generic matrix integrator -------------------------------------------------

def _inertia(w):
    return int(np.count_nonzero(w < 0))


def _run_generic(coefs, n, K0, fam, t0, t_stop, rtol, atol, cap, switch, switching,
                 h_min, h_max, max_steps):
    """Numpy mirror of :func:`_scalar_kernel.integrate_scalar` for matrices."""

    def deriv(mode, t, K):
        return -_rhs(K, coefs[mode](t), t, n)

    t, K, mode = t0, K0, fam
    f = deriv(mode, t, K)
    ts, Ks, Fs, modes = [t], [K], [f], [mode]
    span = t0 - t_stop
    h = -min(span, 1e-3 * max(1.0, span), h_max)
    w = np.linalg.eigvalsh(K)
    tail = []
    steps = 0

    def result(status, t_star=np.nan, t_lo=np.nan, t_hi=np.nan, nrm=np.nan):
        nodes = (np.array(ts), np.array(Ks), np.array(Fs), np.array(modes))
        return status, t_star, t_lo, t_hi, nrm, nodes

    while True:
        if t <= t_stop:
            return result(sk.REACHED, NEG_INFINITY, NEG_INFINITY, NEG_INFINITY, float(np.abs(w).max()))
        if steps >= max_steps:
            return result(sk.BUDGET, nrm=float(np.abs(w).max()))
        if t + h < t_stop:
            h = t_stop - t
        finite = True
        with np.errstate(all="ignore"):
            try:
                k1 = f
                k2 = deriv(mode, t + C2 * h, K + h * A21 * k1)
                k3 = deriv(mode, t + C3 * h, K + h * (A31 * k1 + A32 * k2))
                k4 = deriv(mode, t + C4 * h, K + h * (A41 * k1 + A42 * k2 + A43 * k3))
                k5 = deriv(mode, t + C5 * h, K + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
                k6 = deriv(mode, t + h, K + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
                K_new = K + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
                K_new = 0.5 * (K_new + K_new.T)
                f_new = deriv(mode, t + h, K_new)
                err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * f_new)
                finite = bool(np.all(np.isfinite(K_new)) and np.all(np.isfinite(f_new)))
            except (np.linalg.LinAlgError, NearSingularityError, ValueError):
                finite = False
        if finite:
            sc = atol + rtol * np.maximum(np.abs(K), np.abs(K_new))
            en = float(np.sqrt(np.mean((err / sc) ** 2)))
        else:
            en = np.inf
        if not en <= 1.0:
            fac = max(MIN_FACTOR, SAFETY * en ** -0.2) if finite else 0.25
            h *= min(1.0, fac)
            if abs(h) < h_min:
                nrm = float(np.abs(w).max())
                if not finite and nrm < 1e3:
                    return result(sk.NONFINITE, nrm=nrm)
                t_star = t
                if len(tail) >= 2:
                    (ta, na), (tb, nb) = tail[-2], tail[-1]
                    slope = (1 / nb - 1 / na) / (tb - ta)
                    if slope > 0:
                        t_star = t - (1 / nrm) / slope
                return result(sk.UNDERFLOW, t_star, t_star - (t - t_star), t, nrm)
            continue
        steps += 1
        t_old, K_old, f_old, w_old = t, K, f, w
        t, K, f = t + h, K_new, f_new
        w = np.linalg.eigvalsh(K)
        ts.append(t)
        Ks.append(K)
        Fs.append(f)
        modes.append(mode)
        h = max(h * (MAX_FACTOR if en == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * en ** -0.2))),
                -h_max)
        if switching:
            p_old, p_new = _inertia(w_old), _inertia(w)
            if mode != fam and (p_old != p_new or np.any(w == 0)):
                # sorted eigenvalues are continuous; follow the one changing sign
                idx = p_old if p_new > p_old else max(p_old - 1, 0)

                def g(s, i=idx):
                    Kh = _hermite(t_old, K_old, f_old, t, K, f, s)
                    return np.linalg.eigvalsh(0.5 * (Kh + Kh.T))[i]

                ga, gb = g(t_old), g(t)
                if ga == 0:
                    ta = tb = t_old
                elif gb == 0 or ga * gb > 0:
                    ta = tb = t
                else:
                    root = brentq(g, t, t_old, xtol=1e-15 * max(1.0, abs(t)), rtol=1e-15)
                    ta = tb = root
                t_star = 0.5 * (ta + tb)
                nrm = float(1 / np.abs(w_old).min()) if np.abs(w_old).min() > 0 else np.inf
                return result(sk.CROSSING, t_star, t_star, t_star, nrm)
            if np.abs(w).max() > switch:
                K = np.linalg.inv(K)
                K = 0.5 * (K + K.T)
                mode = 1 - mode
                f = deriv(mode, t, K)
                w = np.linalg.eigvalsh(K)
                ts.append(t)
                Ks.append(K)
                Fs.append(f)
                modes.append(mode)
        else:
            nrm = float(np.abs(w).max())
            tail.append((t, nrm))
            tail = tail[-3:]
            if nrm > cap:
                tt = np.array([a for a, _ in tail])
                yy = np.array([1 / b for _, b in tail])
                t_star = t
                if tt.size >= 2 and np.ptp(tt) > 0:
                    slope = np.polyfit(tt, yy, 1)[0]
                    if slope > 0:
                        t_star = min(t, t - (1 / nrm) / slope)
                return result(sk.CAP, t_star, t_star - (t - t_star), t, nrm)


def _hermite(t0, y0, f0, t1, y1, f1, t):
    h = t1 - t0
    th = (t - t0) / h
    return ((2 * th**3 - 3 * th**2 + 1) * y0 + (th**3 - 2 * th**2 + th) * h * f0
            + (-2 * th**3 + 3 * th**2) * y1 + (th**3 - th**2) * h * f1)


_METHODS = {sk.CROSSING: "crossing", sk.CAP: "cap", sk.UNDERFLOW: "underflow"}


def _integrate(spec, K0, t0, t_stop, param, family, pattern, rtol, atol, cap, switch,
               switching, max_steps, store, backend, max_step=np.inf):
    fam = _family_index(family)
    _check_pattern(pattern)
    n = spec.n
    K0 = _as_matrix(K0, n, "terminal_K")
    if not t_stop < t0:
        raise InputError(f"need stop_t < terminal_t, got {t_stop!r} >= {t0!r}")
    if t0 > spec.T * (1 + 1e-12) + 1e-300:
        raise InputError(f"terminal time {t0!r} exceeds T = {spec.T!r}")
    h_min = 1e-13 * spec.T
    tables = _use_kernel(spec, pattern, backend)
    if tables is not None:
        out = _run_kernel(tables, param, fam, K0[0, 0], t0, t_stop, rtol, atol, cap, switch,
                          switching, h_min, max_step, max_steps, store)
    else:
        coefs = [_FamilyCoefficients(spec, param, pattern, f) for f in FAMILIES]
        out = _run_generic(coefs, n, K0, fam, t0, t_stop, rtol, atol, cap, switch, switching,
                           h_min, max_step, max_steps)
    status, t_star, t_lo, t_hi, nrm, nodes = out
    diag = {"status": status, "t_stop": t_stop, "param": param, "family": family, "norm": nrm}
    if status == sk.NONFINITE:
        raise NumericalFailure("non-finite Riccati values before blow-up was detected", diag)
    if status == sk.BUDGET:
        raise NumericalFailure(f"step budget of {max_steps} exhausted", diag)
    if status == sk.REACHED:
        res = BlowUpResult(NEG_INFINITY, (NEG_INFINITY, float(t_stop)), float(nrm), float(param),
                           family, "none")
    else:
        res = BlowUpResult(float(t_star), (float(min(t_lo, t_star)), float(max(t_hi, t_star))),
                           float(nrm), float(param), family, _METHODS[status])
    return res, nodes


def integrate_backward(terminal_K, terminal_t, stop_t, spec, varrho, family="primal",
                       pattern="coupling", *, rtol=RTOL, atol=ATOL, cap=BLOWUP_CAP,
                       switching=False, switch_threshold=SWITCH_THRESHOLD,
                       max_steps=MAX_STEPS, max_step=np.inf, backend="auto"):
    """Integrate a Riccati family backward from ``terminal_t`` to ``stop_t``.

    Dormand-Prince 5(4) with relative/absolute tolerances ``rtol``/``atol``,
    symmetrisation after every step and cubic Hermite dense output.

    Parameters
    ----------
    terminal_K : array_like
        Symmetric ``n x n`` terminal value (a scalar is accepted for n = 1).
    varrho : float
        Perturbation parameter (``varrho`` for ``"coupling"``, ``rho`` for ``"shift"``).
    switching : bool
        Continue through blow-ups of ``K`` by inverting into the partner
        family instead of stopping at the norm cap.
    max_step : float
        Upper bound on the step length (keeps the cubic dense output
        accurate when the trajectory is sampled densely).
    backend : {"auto", "kernel", "generic"}
        ``"auto"`` uses the compiled scalar kernel when the reduced scalar
        equation applies.

    Returns
    -------
    (RiccatiTrajectory, BlowUpResult)
    """
    res, nodes = _integrate(spec, terminal_K, float(terminal_t), float(stop_t), float(varrho),
                            family, pattern, rtol, atol, cap, switch_threshold, switching,
                            max_steps, True, backend, max_step)
    ts, Ks, Fs, modes = nodes
    fams = np.array(FAMILIES)[modes]
    if res.finite:
        reason = "blow-up-detected"
    elif fams[-1] != family:
        reason = "switched-to-dual" if family == "primal" else "switched-to-primal"
    else:
        reason = "reached-left-endpoint"
    traj = RiccatiTrajectory(grid=ts, K=Ks, dK=Fs, families=fams, direction=family,
                             param=float(varrho), pattern=pattern, stop_reason=reason, spec=spec)
    return traj, res


def blow_up_time(spec, param, family="primal", terminal=None, pattern="coupling", *,
                 margin=None, rtol=RTOL, atol=ATOL, switch_threshold=SWITCH_THRESHOLD,
                 max_steps=MAX_STEPS, backend="auto"):
    """Blow-up time of one family from a terminal condition.

    Integrates in switching mode down to ``-margin`` (default ``2 T``) so
    that blow-ups just below zero are still seen.  Coefficients are extended
    constantly outside ``[0, T]``.

    Parameters
    ----------
    terminal : (float, array_like), optional
        Terminal time and value; default ``(T, 0)``.

    Returns
    -------
    BlowUpResult
        ``value`` is ``NEG_INFINITY`` if there is no blow-up above ``-margin``.
    """
    if terminal is None:
        terminal = (spec.T, np.zeros((spec.n, spec.n)))
    t0, K0 = terminal
    if not 0 < t0 <= spec.T * (1 + 1e-12):
        raise InputError(f"terminal time must lie in (0, T], got {t0!r}")
    margin = 2 * spec.T if margin is None else float(margin)
    res, _ = _integrate(spec, K0, float(t0), -margin, float(param), family, pattern, rtol, atol,
                        BLOWUP_CAP, switch_threshold, True, max_steps, False, backend)
    return res


def closed_form_k1(varrho, t, spec):
    """Explicit scalar envelope of the primal solution for ``varrho`` in ``[0, 1]``.

    ``k1(t) = A / (2B) * (exp(2B (T - t)) - 1)`` with
    ``A = |H11| + varrho^2/delta * (|H13|^2 + |H14|^2)`` and
    ``B = |H12| + varrho^2/delta * (|H13| |H23| + |H14| |H24|)``, all norms
    being sup norms over ``[0, T]``.  For ``B = 0`` the limit ``A (T - t)``
    is returned.
    """
    H = spec.H
    nrm = {kl: H.block(*kl).sup_norm() for kl in [(1, 1), (1, 2), (1, 3), (1, 4), (2, 3), (2, 4)]}
    w = varrho**2 / spec.delta
    A = nrm[1, 1] + w * (nrm[1, 3] ** 2 + nrm[1, 4] ** 2)
    B = nrm[1, 2] + w * (nrm[1, 3] * nrm[2, 3] + nrm[1, 4] * nrm[2, 4])
    tau = spec.T - np.asarray(t, dtype=float)
    if B == 0:
        return A * tau
    return A / (2 * B) * np.expm1(2 * B * tau)


def check_weaker_condition(spec, trajectory, c):
    """Check ``(I - K H33)^T (I - K H33) >= c (H13 + K H23)^T (H13 + K H23)`` at all nodes.

    The analogous inequality with ``H44``, ``H14``, ``H24`` is checked too,
    using the coefficient matrix of each node's family.  A node passes when
    the smallest eigenvalue of the difference is at least ``-1e-8``.
    """
    n = spec.n
    eye = np.eye(n)
    coefs = {f: _FamilyCoefficients(spec, trajectory.param, trajectory.pattern, f) for f in FAMILIES}
    for t, K, fam in zip(trajectory.grid, trajectory.K, trajectory.families):
        b = coefs[fam](t)
        for d, off, cross in ((b[3, 3], b[1, 3], b[2, 3]), (b[4, 4], b[1, 4], b[2, 4])):
            left = eye - K @ d
            right = off + K @ cross
            D = left.T @ left - c * (right.T @ right)
            if np.linalg.eigvalsh(0.5 * (D + D.T))[0] < -1e-8:
                return False
    return True


__all__ = [
    "BlowUpResult", "RiccatiTrajectory", "NEG_INFINITY", "solve_gain", "rhs_primal", "rhs_dual",
    "rhs_scalar", "integrate_backward", "blow_up_time", "closed_form_k1", "check_weaker_condition",
]
