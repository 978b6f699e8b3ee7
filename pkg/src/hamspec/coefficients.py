"""Time-dependent coefficient data of the linear Hamiltonian system.

The coefficient matrix ``H(t)`` is a symmetric ``4n x 4n`` matrix split into
``n x n`` blocks ``H_kl`` (``k, l = 1..4``) with ``H_34 = H_43 = 0``.  Every
block is a piecewise polynomial on a breakpoint grid covering ``[0, T]``; the
field keeps one merged grid so a full-matrix evaluation is a single Horner
pass.

Two parameterised perturbations are supported:

``"coupling"``
    The coupling blocks ``H_13, H_14, H_22, H_23, H_24`` (and transposes) are
    multiplied by ``varrho = 1 - rho``; the diagonal ``H_11, H_33, H_44`` and
    the drift block ``H_12`` are untouched.
``"shift"``
    Only ``H_22`` moves: ``H_22 - rho * Hbar_22``.
"""

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    AssumptionError,
    DimensionError,
    DomainError,
    InputError,
    SingularityError,
)

BLOCK_KEYS = [(k, l) for k in range(1, 5) for l in range(k, 5) if (k, l) != (3, 4)]
COUPLING_BLOCKS = [(1, 3), (1, 4), (2, 2), (2, 3), (2, 4)]
PATTERNS = ("coupling", "shift")

SAMPLES_PER_PIECE = 1024
_DOMAIN_SLACK = 1e-12


def _blk(k, l, n):
    return slice((k - 1) * n, k * n), slice((l - 1) * n, l * n)


def _taylor_shift(c, h):
    """Coefficients of ``p(s + h)`` given ascending coefficients of ``p(s)`` (axis 0)."""
    d = c.shape[0]
    out = np.zeros_like(c)
    for k in range(d):
        for j in range(k, d):
            out[k] += comb(j, k) * h ** (j - k) * c[j]
    return out


class PiecewisePoly:
    """Matrix-valued piecewise polynomial.

    Parameters
    ----------
    breaks : array_like, shape (P + 1,)
        Strictly increasing breakpoints.
    coeffs : array_like, shape (P, D + 1, r, c) or (P, D + 1)
        Ascending coefficients in the local variable ``s = t - breaks[i]``.
        The two-dimensional form is a scalar polynomial (``r = c = 1``).
    check_continuity : bool
        Reject fields whose one-sided limits disagree at interior breakpoints.
    """

    def __init__(self, breaks, coeffs, check_continuity=True, rtol=1e-9):
        breaks = np.asarray(breaks, dtype=float)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim == 2:
            coeffs = coeffs[:, :, None, None]
        if coeffs.ndim != 4:
            raise InputError(f"coeffs must have 2 or 4 dimensions, got {coeffs.ndim}")
        if breaks.ndim != 1 or breaks.size != coeffs.shape[0] + 1:
            raise InputError("need exactly one more breakpoint than pieces")
        if np.any(np.diff(breaks) <= 0):
            raise InputError("breakpoints must be strictly increasing")
        self.breaks = breaks
        self.coeffs = coeffs
        self.breaks.setflags(write=False)
        self.coeffs.setflags(write=False)
        if check_continuity:
            self._check_continuity(rtol)

    @classmethod
    def constant(cls, value, t0, t1):
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls([t0, t1], value[None, None])

    @property
    def npieces(self):
        return self.coeffs.shape[0]

    @property
    def degree(self):
        return self.coeffs.shape[1] - 1

    @property
    def shape(self):
        return self.coeffs.shape[2:]

    @property
    def is_constant(self):
        return self.npieces == 1 and not np.any(self.coeffs[:, 1:])

    def _check_continuity(self, rtol):
        for i in range(1, self.npieces):
            h = self.breaks[i] - self.breaks[i - 1]
            left = self._horner(self.coeffs[i - 1], h)
            right = self.coeffs[i, 0]
            scale = 1.0 + max(np.abs(left).max(), np.abs(right).max())
            if np.abs(left - right).max() > rtol * scale:
                raise InputError(
                    f"piecewise polynomial is discontinuous at t={self.breaks[i]!r}"
                )

    @staticmethod
    def _horner(c, s):
        out = c[-1].copy()
        for j in range(c.shape[0] - 2, -1, -1):
            out = out * s + c[j]
        return out

    def _index(self, t):
        i = np.searchsorted(self.breaks, t, side="right") - 1
        return np.clip(i, 0, self.npieces - 1)

    def _check_domain(self, t):
        t0, t1 = self.breaks[0], self.breaks[-1]
        slack = _DOMAIN_SLACK * max(1.0, abs(t1 - t0))
        t_arr = np.asarray(t)
        if np.any(t_arr < t0 - slack) or np.any(t_arr > t1 + slack) or np.any(np.isnan(t_arr)):
            raise DomainError(f"t={t!r} outside [{t0}, {t1}]")

    def __call__(self, t, clamp=False):
        """Evaluate at a scalar time.  ``clamp`` extends constantly past the ends."""
        if not clamp:
            self._check_domain(t)
        t = min(max(float(t), self.breaks[0]), self.breaks[-1])
        i = int(self._index(t))
        return self._horner(self.coeffs[i], t - self.breaks[i])

    def eval_many(self, ts, clamp=False):
        ts = np.asarray(ts, dtype=float)
        if not clamp:
            self._check_domain(ts)
        ts = np.clip(ts, self.breaks[0], self.breaks[-1])
        idx = self._index(ts)
        s = (ts - self.breaks[idx])[:, None, None]
        c = self.coeffs[idx]
        out = c[:, -1].copy()
        for j in range(c.shape[1] - 2, -1, -1):
            out = out * s + c[:, j]
        return out

    def refine(self, new_breaks):
        """Re-express on a finer grid that contains every current breakpoint."""
        new_breaks = np.asarray(new_breaks, dtype=float)
        if np.array_equal(new_breaks, self.breaks):
            return self
        new = np.empty((new_breaks.size - 1,) + self.coeffs.shape[1:])
        for j, t0 in enumerate(new_breaks[:-1]):
            i = int(self._index(t0))
            new[j] = _taylor_shift(self.coeffs[i], t0 - self.breaks[i])
        return PiecewisePoly(new_breaks, new, check_continuity=False)

    def with_degree(self, degree):
        if degree <= self.degree:
            return self
        pad = np.zeros((self.npieces, degree - self.degree) + self.shape)
        return PiecewisePoly(self.breaks, np.concatenate([self.coeffs, pad], axis=1),
                             check_continuity=False)

    def _aligned(self, other):
        if not np.isclose(self.breaks[0], other.breaks[0]) or not np.isclose(
            self.breaks[-1], other.breaks[-1]
        ):
            raise InputError("piecewise polynomials live on different intervals")
        grid = np.union1d(self.breaks, other.breaks)
        return self.refine(grid), other.refine(grid), grid

    def __add__(self, other):
        if not isinstance(other, PiecewisePoly):
            c = self.coeffs.copy()
            c[:, 0] += np.asarray(other, dtype=float)
            return PiecewisePoly(self.breaks, c, check_continuity=False)
        a, b, grid = self._aligned(other)
        d = max(a.degree, b.degree)
        a, b = a.with_degree(d), b.with_degree(d)
        return PiecewisePoly(grid, a.coeffs + b.coeffs, check_continuity=False)

    __radd__ = __add__

    def __neg__(self):
        return PiecewisePoly(self.breaks, -self.coeffs, check_continuity=False)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, PiecewisePoly):
            return PiecewisePoly(self.breaks, self.coeffs * float(other), check_continuity=False)
        return self @ other

    __rmul__ = __mul__

    def __matmul__(self, other):
        """Exact product on the merged grid (matrix product of the values)."""
        a, b, grid = self._aligned(other)
        d = a.degree + b.degree
        out = np.zeros((grid.size - 1, d + 1, a.shape[0], b.shape[1]))
        for i in range(a.degree + 1):
            for j in range(b.degree + 1):
                out[:, i + j] += a.coeffs[:, i] @ b.coeffs[:, j]
        return PiecewisePoly(grid, out, check_continuity=False)

    @property
    def T(self):
        return PiecewisePoly(self.breaks, np.swapaxes(self.coeffs, -1, -2), check_continuity=False)

    def sample_times(self, per_piece=SAMPLES_PER_PIECE):
        pieces = [np.linspace(a, b, per_piece) for a, b in zip(self.breaks[:-1], self.breaks[1:])]
        return np.unique(np.concatenate(pieces))

    def scalar_extrema(self, per_piece=SAMPLES_PER_PIECE):
        """Minimum and maximum of a scalar polynomial over its whole domain.

        Dense samples plus the real critical points of every piece.

        Returns
        -------
        (min_value, t_min, max_value, t_max)
        """
        if self.shape != (1, 1):
            raise DimensionError("scalar_extrema needs a scalar polynomial")
        cand = [self.sample_times(per_piece)]
        for i in range(self.npieces):
            c = self.coeffs[i, :, 0, 0]
            h = self.breaks[i + 1] - self.breaks[i]
            if c.size > 2 and np.any(c[2:]):
                dc = np.polynomial.polynomial.polyder(c)
                roots = np.polynomial.polynomial.polyroots(np.trim_zeros(dc, "b") if np.any(dc) else dc)
                roots = roots[np.abs(roots.imag) < 1e-12].real
                roots = roots[(roots >= 0) & (roots <= h)]
                cand.append(self.breaks[i] + roots)
        ts = np.concatenate(cand)
        vals = self.eval_many(ts, clamp=True)[:, 0, 0]
        imin, imax = int(np.argmin(vals)), int(np.argmax(vals))
        return float(vals[imin]), float(ts[imin]), float(vals[imax]), float(ts[imax])

    def sup_norm(self, per_piece=SAMPLES_PER_PIECE):
        """Supremum over the domain of the spectral norm of the value."""
        if self.shape == (1, 1):
            lo, _, hi, _ = self.scalar_extrema(per_piece)
            return max(abs(lo), abs(hi))
        if self.is_constant:
            return float(np.linalg.norm(self.coeffs[0, 0], 2))
        ts = self.sample_times(per_piece)
        norms = np.linalg.norm(self.eval_many(ts, clamp=True), ord=2, axis=(1, 2))
        i = int(np.argmax(norms))
        best = float(norms[i])
        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
        if hi > lo:
            res = minimize_scalar(lambda t: -np.linalg.norm(self(t, clamp=True), 2),
                                  bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12 * max(1.0, hi)})
            best = max(best, -float(res.fun))
        return best


def _as_matrix(value, n, where):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return arr * np.eye(n)
    if arr.shape != (n, n):
        raise InputError(f"{where}: expected a scalar or an {n}x{n} matrix, got shape {arr.shape}")
    return arr


class CoefficientField:
    """Block-symmetric ``4n x 4n`` coefficient field on ``[0, T]``.

    Parameters
    ----------
    n : int
        State dimension.
    T : float
        Horizon.
    blocks : mapping
        ``(k, l) -> PiecewisePoly`` with ``n x n`` values.  Only one of
        ``(k, l)`` and ``(l, k)`` is needed; the other is its transpose.
        Missing blocks are zero and ``(3, 4)`` must not be given.
    """

    def __init__(self, n, T, blocks=None, name="H"):
        if int(n) != n or n < 1:
            raise InputError(f"n must be a positive integer, got {n!r}")
        if not T > 0:
            raise InputError(f"T must be positive, got {T!r}")
        self.n = int(n)
        self.T = float(T)
        self.name = name
        blocks = dict(blocks or {})
        upper = {}
        for (k, l), poly in blocks.items():
            if not (1 <= k <= 4 and 1 <= l <= 4):
                raise InputError(f"block index ({k},{l}) out of range")
            if {k, l} == {3, 4}:
                if np.any(poly.coeffs):
                    raise InputError("blocks (3,4) and (4,3) are structurally zero")
                continue
            if poly.shape != (self.n, self.n):
                raise InputError(f"block ({k},{l}) has shape {poly.shape}, expected {(self.n,) * 2}")
            if not (np.isclose(poly.breaks[0], 0.0) and np.isclose(poly.breaks[-1], self.T)):
                raise InputError(f"block ({k},{l}) must cover [0, {self.T}]")
            key, p = ((k, l), poly) if k <= l else ((l, k), poly.T)
            if key in upper:
                a, b = upper[key], p
                grid = np.union1d(a.breaks, b.breaks)
                if not np.allclose(a.with_degree(b.degree).refine(grid).coeffs,
                                   b.with_degree(a.degree).refine(grid).coeffs, atol=1e-12):
                    raise InputError(f"blocks ({key[0]},{key[1]}) and ({key[1]},{key[0]}) are not transposes")
                continue
            if k == l and not np.allclose(p.coeffs, np.swapaxes(p.coeffs, -1, -2), atol=1e-12):
                raise InputError(f"diagonal block ({k},{k}) must be symmetric")
            upper[key] = p
        grid = np.array([0.0, self.T])
        for p in upper.values():
            grid = np.union1d(grid, p.breaks)
        grid[0], grid[-1] = 0.0, self.T
        grid = grid[np.concatenate([[True], np.diff(grid) > 1e-14 * self.T])]
        degree = max([p.degree for p in upper.values()], default=0)
        full = np.zeros((grid.size - 1, degree + 1, 4 * self.n, 4 * self.n))
        for (k, l), p in upper.items():
            p = PiecewisePoly(np.r_[0.0, p.breaks[1:-1], self.T], p.coeffs, check_continuity=False)
            c = p.with_degree(degree).refine(grid).coeffs
            r, s = _blk(k, l, self.n)
            full[:, :, r, s] = c
            if k != l:
                full[:, :, s, r] = np.swapaxes(c, -1, -2)
        self._blocks = upper
        self.poly = PiecewisePoly(grid, full, check_continuity=True)

    @classmethod
    def from_constants(cls, n, T, values, name="H"):
        """Build a constant field from ``{(k, l): scalar-or-matrix}``."""
        blocks = {
            key: PiecewisePoly.constant(_as_matrix(v, n, f"block {key}"), 0.0, T)
            for key, v in values.items()
        }
        return cls(n, T, blocks, name=name)

    @property
    def breakpoints(self):
        return self.poly.breaks

    @property
    def is_constant(self):
        return self.poly.is_constant

    def evaluate(self, t):
        """Assembled symmetric ``4n x 4n`` matrix at time ``t`` in ``[0, T]``."""
        return self.poly(t)

    def at(self, t):
        """Evaluation with constant extension outside ``[0, T]`` (integrator use)."""
        return self.poly(t, clamp=True)

    def eval_many(self, ts, clamp=False):
        return self.poly.eval_many(ts, clamp=clamp)

    def block(self, k, l):
        """Block ``(k, l)`` as a piecewise polynomial on the merged grid."""
        r, s = _blk(k, l, self.n)
        return PiecewisePoly(self.poly.breaks, self.poly.coeffs[:, :, r, s], check_continuity=False)

    def block_at(self, k, l, t):
        r, s = _blk(k, l, self.n)
        return self.evaluate(t)[r, s]

    def sample_times(self, per_piece=SAMPLES_PER_PIECE):
        return self.poly.sample_times(per_piece)

    def to_blocks_dict(self):
        """JSON-ready list of upper-triangle blocks in the config layout."""
        out = []
        for k, l in BLOCK_KEYS:
            p = self.block(k, l)
            if not np.any(p.coeffs):
                continue
            pieces = []
            for i in range(p.npieces):
                coeffs = [p.coeffs[i, j].tolist() for j in range(p.degree + 1)]
                if self.n == 1:
                    coeffs = [c[0][0] for c in coeffs]
                pieces.append({"t0": float(p.breaks[i]), "t1": float(p.breaks[i + 1]), "coeffs": coeffs})
            out.append({"k": k, "l": l, "pieces": pieces})
        return out


class DualField(CoefficientField):
    """Coefficients of the dual system, refit from pointwise evaluation."""

    def __init__(self, n, T, blocks, param, pattern):
        super().__init__(n, T, blocks, name="Htilde")
        self.param = param
        self.pattern = pattern


@dataclass(eq=False)
class HamiltonianSpec:
    """Coefficient field, perturbation field and chain generator.

    ``delta``/``delta1`` bracket ``-H33`` and ``-H44``; when omitted they are
    read off the sampled eigenvalues.
    """

    H: CoefficientField
    Hbar: CoefficientField
    Q: np.ndarray
    beta: float
    delta: float = None
    delta1: float = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.Hbar.n != self.H.n or not np.isclose(self.Hbar.T, self.H.T):
            raise InputError("H and Hbar must share n and T")
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        validate_generator(self.Q)
        if not self.beta > 0:
            raise InputError(f"beta must be positive, got {self.beta!r}")
        lo, hi = self._h33_h44_range()
        if self.delta is None:
            self.delta = lo
        if self.delta1 is None:
            self.delta1 = max(hi, self.delta * (1 + 1e-9))
        if not 0 < self.delta < self.delta1:
            raise InputError(f"need 0 < delta < delta1, got {self.delta!r}, {self.delta1!r}")
        tol = 1e-10 * max(1.0, self.delta1)
        if lo < self.delta - tol or hi > self.delta1 + tol:
            raise InputError(
                f"-H33 and -H44 have eigenvalues in [{lo:.6g}, {hi:.6g}], "
                f"outside [delta, delta1] = [{self.delta:.6g}, {self.delta1:.6g}]"
            )

    def _h33_h44_range(self):
        ts = self.H.sample_times(64)
        mats = self.H.eval_many(ts)
        n = self.n
        eig = np.concatenate([
            np.linalg.eigvalsh(-mats[:, 2 * n:3 * n, 2 * n:3 * n]).ravel(),
            np.linalg.eigvalsh(-mats[:, 3 * n:, 3 * n:]).ravel(),
        ])
        return float(eig.min()), float(eig.max())

    @property
    def n(self):
        return self.H.n

    @property
    def T(self):
        return self.H.T


def validate_generator(Q):
    """Check a Markov generator; zero off-diagonal rates only warn."""
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
        raise InputError(f"Q must be square, got shape {Q.shape}")
    scale = max(1.0, np.abs(Q).max())
    if np.any(np.abs(Q.sum(axis=1)) > 1e-12 * scale * Q.shape[0]):
        raise InputError("generator rows must sum to zero")
    off = Q[~np.eye(Q.shape[0], dtype=bool)]
    if np.any(off < 0):
        raise InputError("generator off-diagonal rates must be non-negative")
    if Q.shape[0] > 1 and np.any(off == 0):
        warnings.warn("generator has zero off-diagonal rates; chain may be absorbing",
                      stacklevel=3)


# -- pointwise matrix algebra -------------------------------------------------

def blocks_of(M, n):
    """Dict view ``(k, l) -> n x n`` of a ``4n x 4n`` matrix."""
    return {(k, l): M[_blk(k, l, n)] for k in range(1, 5) for l in range(1, 5)}


def perturb(M, n, param, pattern, Mbar=None):
    """Apply a perturbation pattern to an evaluated coefficient matrix."""
    out = np.array(M, dtype=float, copy=True)
    if pattern == "coupling":
        for k, l in COUPLING_BLOCKS:
            r, s = _blk(k, l, n)
            out[r, s] *= param
            if k != l:
                out[s, r] *= param
    elif pattern == "shift":
        r, s = _blk(2, 2, n)
        out[r, s] -= param * Mbar[r, s]
    else:
        raise InputError(f"unknown perturbation pattern {pattern!r}")
    return out


def dual_matrix(M, n, t=None):
    """Coefficient matrix of the dual system obtained by exchanging x and y."""
    b = blocks_of(M, n)
    try:
        A = np.linalg.inv(b[3, 3])
        B = np.linalg.inv(b[4, 4])
    except np.linalg.LinAlgError:
        raise SingularityError("H33 or H44 is singular", t=t) from None
    if np.linalg.cond(b[3, 3]) > 1e12 or np.linalg.cond(b[4, 4]) > 1e12:
        raise SingularityError("H33 or H44 is numerically singular", t=t)
    d = {}
    d[1, 1] = b[2, 3] @ A @ b[3, 2] + b[2, 4] @ B @ b[4, 2] - b[2, 2]
    d[1, 2] = b[2, 3] @ A @ b[3, 1] + b[2, 4] @ B @ b[4, 1] - b[2, 1]
    d[2, 2] = b[1, 3] @ A @ b[3, 1] + b[1, 4] @ B @ b[4, 1] - b[1, 1]
    d[1, 3] = -b[2, 3] @ A
    d[1, 4] = -b[2, 4] @ B
    d[2, 3] = -b[1, 3] @ A
    d[2, 4] = -b[1, 4] @ B
    d[3, 3] = A
    d[4, 4] = B
    out = np.zeros_like(M, dtype=float)
    for (k, l), v in d.items():
        r, s = _blk(k, l, n)
        out[r, s] = v
        if k != l:
            out[s, r] = v.T
    return 0.5 * (out + out.T)


def signed_matrix(M, n):
    """Matrix of the monotonicity condition: first block row negated."""
    S = np.array(M, dtype=float, copy=True)
    S[:n, :] *= -1.0
    return S


def perturbed_matrix(spec, t, param, pattern, clamp=True):
    M = spec.H.at(t) if clamp else spec.H.evaluate(t)
    Mbar = None
    if pattern == "shift":
        Mbar = spec.Hbar.at(t) if clamp else spec.Hbar.evaluate(t)
    return perturb(M, spec.n, param, pattern, Mbar)


# -- operations ---------------------------------------------------------------

def evaluate(field, t):
    """Assembled ``4n x 4n`` symmetric matrix of ``field`` at ``t``."""
    return field.evaluate(t)


@dataclass(frozen=True)
class MonotonicityReport:
    satisfied: bool
    margin: float
    worst_t: float
    max_eigenvalue: float
    schur_ok: bool
    schur_margin: float
    schur_worst_t: float


def _max_signed_eig(spec, t, rho):
    M = spec.H.at(t) + rho * spec.Hbar.at(t)
    S = signed_matrix(M, spec.n)
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def _schur_max(M, n):
    b = blocks_of(M, n)
    A = np.linalg.inv(b[3, 3])
    B = np.linalg.inv(b[4, 4])
    s1 = -b[1, 1] + b[1, 3] @ A @ b[3, 1] + b[1, 4] @ B @ b[4, 1]
    s2 = b[2, 2] - b[2, 3] @ A @ b[3, 2] - b[2, 4] @ B @ b[4, 2]
    return max(np.linalg.eigvalsh(0.5 * (s1 + s1.T))[-1], np.linalg.eigvalsh(0.5 * (s2 + s2.T))[-1])


def check_monotonicity(spec, rho=0.0, beta=None, per_piece=SAMPLES_PER_PIECE):
    """Check the monotonicity condition for ``H + rho * Hbar``.

    The signed matrix (first block row negated) is symmetrised and its
    largest eigenvalue compared with ``-beta`` on a dense time grid, then the
    worst sample is refined by a bounded scalar search.  The two Schur
    complement inequalities are checked on the same grid.

    Returns
    -------
    MonotonicityReport
        ``margin = -beta - max_eigenvalue``; ``satisfied`` iff ``margin >= 0``
        (up to rounding).
    """
    beta = spec.beta if beta is None else beta
    n = spec.n
    ts = spec.H.sample_times(per_piece)
    if not spec.Hbar.is_constant:
        ts = np.union1d(ts, spec.Hbar.sample_times(per_piece))
    M = spec.H.eval_many(ts) + rho * spec.Hbar.eval_many(ts)
    S = M.copy()
    S[:, :n, :] *= -1.0
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    top = np.linalg.eigvalsh(S)[:, -1]
    i = int(np.argmax(top))
    worst_t, worst = float(ts[i]), float(top[i])
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
    if hi > lo and not (spec.H.is_constant and spec.Hbar.is_constant):
        res = minimize_scalar(lambda t: -_max_signed_eig(spec, t, rho), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12 * max(1.0, spec.T)})
        if -res.fun > worst:
            worst, worst_t = float(-res.fun), float(res.x)
    schur = np.array([_schur_max(m, n) for m in M])
    j = int(np.argmax(schur))
    margin = -beta - worst
    return MonotonicityReport(
        satisfied=bool(margin >= -1e-12 * max(1.0, beta)),
        margin=float(margin),
        worst_t=worst_t,
        max_eigenvalue=worst,
        schur_ok=bool(schur[j] < 0),
        schur_margin=float(-schur[j]),
        schur_worst_t=float(ts[j]),
    )


@dataclass(frozen=True)
class H4Report:
    holds: bool
    first_violation_t: float = None
    reason: str = ""
    monotonicity: MonotonicityReport = None


def check_H4(spec, per_piece=SAMPLES_PER_PIECE, rtol=1e-10):
    """Structural condition of the one-dimensional theory.

    ``H23 = -H33 H13``, ``H24 = -H44 H14``, ``Hbar22 < 0`` on a dense grid,
    plus the monotonicity condition at ``rho = 0``.
    """
    if spec.n != 1:
        raise DimensionError(f"check_H4 needs n = 1, got n = {spec.n}")
    ts = np.union1d(spec.H.sample_times(per_piece), spec.Hbar.sample_times(per_piece))
    M = spec.H.eval_many(ts)[:, :, :]
    hb = spec.Hbar.eval_many(ts)[:, 1, 1]
    h = lambda k, l: M[:, k - 1, l - 1]  # noqa: E731
    scale = 1.0 + np.abs(M).max()
    checks = [
        (np.abs(h(2, 3) + h(3, 3) * h(1, 3)) > rtol * scale, "H23 != -H33*H13"),
        (np.abs(h(2, 4) + h(4, 4) * h(1, 4)) > rtol * scale, "H24 != -H44*H14"),
        (hb >= 0, "Hbar22 is not negative"),
    ]
    first_t, reason = None, ""
    for bad, why in checks:
        if np.any(bad):
            t_bad = float(ts[np.argmax(bad)])
            if first_t is None or t_bad < first_t:
                first_t, reason = t_bad, why
    mono = check_monotonicity(spec, 0.0, per_piece=per_piece)
    if first_t is None and not mono.satisfied:
        first_t, reason = mono.worst_t, "monotonicity condition fails at rho = 0"
    return H4Report(holds=first_t is None, first_violation_t=first_t, reason=reason, monotonicity=mono)


def _lobatto_nodes(a, b, k=4):
    x = -np.cos(np.pi * np.arange(k) / (k - 1))
    return a + (b - a) * (x + 1) / 2


def dual_transform(spec, varrho, pattern="coupling", per_piece=SAMPLES_PER_PIECE):
    """Dual coefficient field of the perturbed system.

    Evaluated pointwise (explicit inverses of ``H33``, ``H44``) and refit on
    the breakpoint grid of ``H``: constant pieces stay constant, other pieces
    become cubics interpolating at Chebyshev-Lobatto nodes (endpoints
    included, so the refit is continuous).

    Raises
    ------
    SingularityError
        If ``H33`` or ``H44`` is singular at a sampled time.
    """
    n, T = spec.n, spec.T
    for t in spec.H.sample_times(min(per_piece, 64)):
        dual_matrix(perturbed_matrix(spec, t, varrho, pattern, clamp=False), n, t=t)
    grid = spec.H.breakpoints
    if pattern == "shift":
        grid = np.union1d(grid, spec.Hbar.breakpoints)
    constant = spec.H.is_constant and (pattern != "shift" or spec.Hbar.is_constant)
    degree = 0 if constant else 3
    coeffs = np.zeros((grid.size - 1, degree + 1, 4 * n, 4 * n))
    for i, (a, b) in enumerate(zip(grid[:-1], grid[1:])):
        if degree == 0:
            coeffs[i, 0] = dual_matrix(perturbed_matrix(spec, 0.5 * (a + b), varrho, pattern), n)
            continue
        nodes = _lobatto_nodes(a, b)
        vals = np.array([dual_matrix(perturbed_matrix(spec, s, varrho, pattern), n, t=s) for s in nodes])
        V = np.vander(nodes - a, degree + 1, increasing=True)
        coeffs[i] = np.linalg.solve(V, vals.reshape(degree + 1, -1)).reshape(degree + 1, 4 * n, 4 * n)
    full = PiecewisePoly(grid, coeffs, check_continuity=False)
    blocks = {}
    for k, l in BLOCK_KEYS:
        r, s = _blk(k, l, n)
        blocks[k, l] = PiecewisePoly(grid, full.coeffs[:, :, r, s], check_continuity=False)
    return DualField(n, T, blocks, param=varrho, pattern=pattern)


def scalar_reduction(spec):
    """Coefficient functions of the reduced one-dimensional Riccati equation.

    Returns ``(a, b, c0, hbar)`` as scalar piecewise polynomials with

    * ``a = 2 H21 + H13^2 + H14^2``
    * ``b = H11``
    * ``c0 = H22 - H33 H13^2 - H44 H14^2``
    * ``hbar = Hbar22``

    so the primal equation reads ``-k' = a k + b + (c0 - rho * hbar) k^2``.
    """
    if spec.n != 1:
        raise DimensionError(f"scalar reduction needs n = 1, got n = {spec.n}")
    H = spec.H
    h = lambda k, l: H.block(k, l)  # noqa: E731
    a = 2 * h(2, 1) + h(1, 3) * h(1, 3) + h(1, 4) * h(1, 4)
    b = h(1, 1)
    c0 = h(2, 2) - h(3, 3) * h(1, 3) * h(1, 3) - h(4, 4) * h(1, 4) * h(1, 4)
    return a, b, c0, spec.Hbar.block(2, 2)


def compute_rho_b(spec):
    """Ratio ``min_t c0(t) / max_t Hbar22(t)`` bounding the spectrum from below.

    Raises
    ------
    AssumptionError
        If ``Hbar22`` is not negative on the whole horizon.
    """
    _, _, c0, hb = scalar_reduction(spec)
    hb_max = hb.scalar_extrema()[2]
    if hb_max >= 0:
        raise AssumptionError(f"Hbar22 must be negative on [0, T]; its maximum is {hb_max!r}")
    return c0.scalar_extrema()[0] / hb_max
