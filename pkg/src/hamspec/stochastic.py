"""Markov chain sampling, compensated jump increments and eigenfunction paths."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import _accel
from ._path_kernel import simulate_kernel, simulate_numpy
from .coefficients import validate_generator
from .errors import InputError, ScheduleError
from .riccati import FAMILIES, _FamilyCoefficients, _gains, integrate_backward

DEFAULT_STEPS = 4096
STORE_PATHS = 8
CHUNK = 256
# dense-output error of the gains stays below the Euler error when steps span few nodes
GAIN_STEPS_PER_NODE = 4


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class MarkovChainPath:
    """Piecewise-constant chain path; ``states[k]`` holds on ``[jump_times[k-1], jump_times[k])``."""

    jump_times: np.ndarray
    states: np.ndarray
    Q: np.ndarray = field(repr=False)
    T: float = 1.0

    def state_at(self, t):
        """State prevailing at ``t`` (right-continuous)."""
        return self.states[np.searchsorted(self.jump_times, t, side="right")]

    @property
    def n_jumps(self):
        return int(self.jump_times.size)


def sample_chain(Q, initial_state=1, T=1.0, rng_seed=None):
    """Exact (Gillespie) sample of a continuous-time chain on ``[0, T]``.

    States are 1-based.  Holding times are exponential with rate ``-q_ii``;
    the next state is drawn with probabilities ``q_ij / -q_ii``.  An
    absorbing state (``q_ii = 0``) holds until ``T``.

    Parameters
    ----------
    rng_seed : int, SeedSequence or numpy Generator
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    validate_generator(Q)
    m = Q.shape[0]
    if not 1 <= initial_state <= m:
        raise InputError(f"initial_state must be in 1..{m}, got {initial_state!r}")
    rng = _rng(rng_seed)
    t, s = 0.0, int(initial_state)
    times, states = [], [s]
    while True:
        rate = -Q[s - 1, s - 1]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        p = Q[s - 1].copy()
        p[s - 1] = 0.0
        s = int(rng.choice(m, p=p / rate)) + 1
        times.append(t)
        states.append(s)
    return MarkovChainPath(np.array(times), np.array(states, dtype=np.int64), Q, float(T))


@dataclass(frozen=True)
class CompensatedJumpIncrements:
    """Per-step jump counts and compensator on a time grid.

    ``r`` is the rate of the state prevailing at the start of the step and
    ``compensator`` the exact integral of the rate over the step, which
    differs from ``r * dt`` only on steps containing a jump.
    """

    grid: np.ndarray
    dV: np.ndarray
    r: np.ndarray
    compensator: np.ndarray
    dVtilde: np.ndarray

    @property
    def Vtilde(self):
        return np.concatenate([[0.0], np.cumsum(self.dVtilde)])


def compensated_increments(path, grid):
    """Bin the jumps of ``path`` into the steps of ``grid`` and subtract the compensator."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise InputError("grid must be strictly increasing with at least two nodes")
    if grid[0] > 0 or grid[-1] < path.T * (1 - 1e-12):
        raise InputError("grid must cover [0, T]")
    rates = -np.diag(path.Q)[path.states - 1]
    jt = path.jump_times
    # step k is (grid[k], grid[k+1]]; a jump exactly at grid[0] = 0 cannot occur
    idx = np.searchsorted(grid, jt, side="left") - 1
    dV = np.bincount(np.clip(idx, 0, grid.size - 2), minlength=grid.size - 1).astype(np.int64)
    r = rates[np.searchsorted(jt, grid[:-1], side="right")]
    # exact integral of the piecewise-constant rate
    knots = np.concatenate([[0.0], jt])
    cum = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(knots))])
    k = np.searchsorted(jt, grid, side="right")
    comp = np.diff(cum[k] + rates[k] * (grid - knots[k]))
    return CompensatedJumpIncrements(grid, dV, r, comp, dV - comp)


# -- eigenfunction simulation ---------------------------------------------------

@dataclass
class EigenfunctionPath:
    """One simulated eigenfunction path in primal variables.

    ``segments[i]`` is the gain interval used from node ``i`` onwards and
    ``families[i]`` its family.  ``residuals`` holds ``x0_norm``,
    ``yT_norm``, ``sup_x_norm`` and ``decouple_resid``.
    """

    path_id: int
    times: np.ndarray
    states: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    segments: np.ndarray
    families: np.ndarray
    residuals: dict


@dataclass(frozen=True)
class ResidualReport:
    x0: float
    yT_mean: float
    yT_se: float
    nontriviality: float
    decouple_max: float
    n_paths: int

    @property
    def yT_ratio(self):
        """Scale-free terminal residual ``E|y_T| / E sup|x|``."""
        return self.yT_mean / self.nontriviality if self.nontriviality > 0 else 0.0

    def to_dict(self):
        return {"x0": self.x0, "yT_mean": self.yT_mean, "yT_se": self.yT_se,
                "nontriviality": self.nontriviality, "decouple_max": self.decouple_max,
                "yT_ratio": self.yT_ratio, "n_paths": self.n_paths}


def _report_from_stats(stats):
    n = stats.shape[0]
    if n == 0:
        raise InputError("need at least one path")
    yT = stats[:, 1]
    mean = math.fsum(yT) / n
    var = math.fsum((yT - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return ResidualReport(
        x0=float(stats[:, 0].max()),
        yT_mean=float(mean),
        yT_se=float(math.sqrt(var / n)),
        nontriviality=float(math.fsum(stats[:, 2]) / n),
        decouple_max=float(stats[:, 3].max()),
        n_paths=int(n),
    )


def residual_report(paths):
    """Aggregate residuals of :class:`EigenfunctionPath` objects."""
    if not paths:
        raise InputError("need at least one path")
    stats = np.array([[p.residuals["x0_norm"], p.residuals["yT_norm"], p.residuals["sup_x_norm"],
                       p.residuals["decouple_resid"]] for p in paths])
    return _report_from_stats(stats)


@dataclass
class GainTable:
    """Per-step closed-loop matrices on a simulation grid (see ``_path_kernel``)."""

    times: np.ndarray
    step_family: np.ndarray
    step_segment: np.ndarray
    K: np.ndarray
    L: np.ndarray
    P: np.ndarray
    Kend: np.ndarray
    swap: np.ndarray
    mats: dict
    coef: dict = field(repr=False)


def _snap_schedule(schedule, T, times):
    if not schedule:
        raise ScheduleError("empty gain schedule")
    sched = sorted(schedule, key=lambda s: s["t0"])
    tol = 1e-9 * max(1.0, T)
    if abs(sched[0]["t0"]) > tol or abs(sched[-1]["t1"] - T) > tol:
        raise ScheduleError("gain schedule must cover [0, T]")
    for a, b in zip(sched[:-1], sched[1:]):
        if abs(a["t1"] - b["t0"]) > tol:
            raise ScheduleError(f"gain schedule gap between {a['t1']!r} and {b['t0']!r}")
        if a["family"] == b["family"]:
            raise ScheduleError("consecutive gain intervals must alternate families")
    for s in sched:
        if s["family"] not in FAMILIES or not s["t1"] > s["t0"]:
            raise ScheduleError(f"bad gain interval {s!r}")
    edges = [0] + [int(np.argmin(np.abs(times - s["t0"]))) for s in sched[1:]] + [times.size - 1]
    if np.any(np.diff(edges) <= 0):
        raise ScheduleError("simulation grid too coarse for the gain schedule")
    return sched, edges


def build_gain_table(record, spec, times):
    """Integrate the gain schedule backward from ``T`` on the simulation grid.

    Interval boundaries are snapped to grid nodes.  The top interval starts
    from zero; each lower interval starts from the inverse of the value the
    interval above reached at the shared boundary.

    Raises
    ------
    ScheduleError
        On gaps, a grid too coarse for the schedule, or a blow-up inside an
        interval.
    """
    n, T = spec.n, spec.T
    sched, edges = _snap_schedule(record.gain_schedule, T, times)
    if sched[-1]["family"] != "primal":
        raise ScheduleError("the last gain interval must use the primal family")
    param, pattern = record.param, record.pattern
    coef = {f: _FamilyCoefficients(spec, param, pattern, f) for f in FAMILIES}
    N = times.size - 1
    K = np.empty((N + 1, n, n))
    Kend = np.empty((N, n, n))
    fam_step = np.empty(N, dtype=object)
    seg_step = np.empty(N, dtype=np.int64)
    term = np.zeros((n, n))
    for k in range(len(sched) - 1, -1, -1):
        ia, ib = edges[k], edges[k + 1]
        fam = sched[k]["family"]
        traj, res = integrate_backward(term, times[ib], times[ia], spec, param, fam, pattern,
                                       max_step=GAIN_STEPS_PER_NODE * (times[1] - times[0]))
        if res.finite:
            raise ScheduleError(f"{fam} gains blow up at t={res.value!r} inside [{times[ia]}, {times[ib]}]")
        vals = np.array([traj.at(t)[0] for t in times[ia:ib + 1]])
        vals[-1] = traj.K[0]
        vals[0] = traj.K[-1]
        K[ia:ib] = vals[:-1]
        Kend[ia:ib] = vals[1:]
        fam_step[ia:ib] = fam
        seg_step[ia:ib] = k
        term = np.linalg.inv(traj.K[-1])
        term = 0.5 * (term + term.T)
    K[N] = Kend[N - 1]
    swap = np.zeros(N + 1, dtype=np.bool_)
    swap[1:N] = fam_step[1:] != fam_step[:-1]
    L = np.empty_like(K)
    P = np.empty_like(K)
    names = ("D", "S", "J", "Ax", "Ay")
    mats = {k: np.empty((N, n, n)) for k in names}
    for i in range(N + 1):
        fam = fam_step[min(i, N - 1)]
        b = coef[fam](times[i])
        L[i], P[i] = _gains(K[i], b, times[i], n)
        if i == N:
            break
        mats["D"][i] = b[2, 1] + b[2, 2] @ K[i] + b[2, 3] @ L[i] + b[2, 4] @ P[i]
        mats["S"][i] = b[3, 1] + b[3, 2] @ K[i] + b[3, 3] @ L[i]
        mats["J"][i] = b[4, 1] + b[4, 2] @ K[i] + b[4, 4] @ P[i]
        mats["Ax"][i] = -(b[1, 1] + b[1, 3] @ L[i] + b[1, 4] @ P[i])
        mats["Ay"][i] = -b[1, 2]
    return GainTable(times, fam_step.astype(str), seg_step, K, L, P, Kend, swap, mats, coef)


def _start_vector(record, n):
    if record.kernel_basis is not None:
        v = np.asarray(record.kernel_basis, dtype=float).reshape(n, -1)[:, 0]
    else:
        v = np.ones(n)
    return v / np.linalg.norm(v)


def _draw_path(Q, init, T, N, seed_seq):
    rng = np.random.default_rng(seed_seq)
    chain = sample_chain(Q, init, T, rng)
    Z = rng.standard_normal(N)
    xi = rng.standard_normal(chain.n_jumps)
    return chain, Z, xi


def _to_primal(table, xr, yr):
    """Convert stored raw (family) variables to primal (x, y, z, theta)."""
    N = table.times.size - 1
    fam = np.append(table.step_family, table.step_family[-1])
    x = np.where((fam == "dual")[:, None], yr, xr)
    y = np.where((fam == "dual")[:, None], xr, yr)
    z = np.einsum("tij,tj->ti", table.L, xr)
    th = np.einsum("tij,tj->ti", table.P, xr)
    for i in np.flatnonzero(fam == "dual"):
        b = table.coef["dual"](table.times[min(i, N)])
        z[i] = b[3, 1] @ xr[i] + b[3, 2] @ yr[i] + b[3, 3] @ z[i]
        th[i] = b[4, 1] @ xr[i] + b[4, 2] @ yr[i] + b[4, 4] @ th[i]
    return x, y, z, th


def simulate_eigenfunction(record, spec, n_paths, rng_seed, grid_dt=None, *, initial_state=None,
                           store_paths=STORE_PATHS, backend=None):
    """Monte Carlo eigenfunction paths for a certified eigenvalue.

    Each path starts from the unit start vector in dual variables with
    ``ytilde_0 = 0`` (so ``x_0 = 0`` exactly), runs the closed-loop
    Euler-Maruyama scheme through the gain schedule and swaps ``(x, y)`` at
    every change of family.  ``y`` follows its own forward equation, so
    ``|y - K x|`` measures the discretisation error.

    Parameters
    ----------
    grid_dt : float, optional
        Target step; the grid has ``ceil(T / grid_dt)`` equal steps
        (default ``T / 4096``).
    store_paths : int
        Number of leading paths returned with full arrays; residual
        statistics always use every path.
    backend : {"numba", "numpy"}, optional
        Defaults to the accelerated kernel when numba is available.

    Returns
    -------
    (list of EigenfunctionPath, ResidualReport)
    """
    n, T = spec.n, spec.T
    if n_paths < 1:
        raise InputError("n_paths must be positive")
    N = DEFAULT_STEPS if grid_dt is None else max(1, int(math.ceil(T / grid_dt - 1e-9)))
    times = np.linspace(0.0, T, N + 1)
    table = build_gain_table(record, spec, times)
    init = initial_state or spec.extra.get("initial_state", 1)
    if table.step_family[0] != "dual":
        raise ScheduleError("the first gain interval must use the dual family")
    x0 = _start_vector(record, n)
    y0 = np.zeros(n)
    dual_node = np.append(table.step_family, table.step_family[-1]) == "dual"
    backend = backend or _accel.backend()
    sim = simulate_kernel if backend == "numba" else simulate_numpy
    seqs = np.random.SeedSequence(rng_seed).spawn(n_paths)
    Q = spec.Q
    rates = -np.diag(Q)
    m = table.mats
    stats = np.empty((n_paths, 4))
    stored = []
    for c0 in range(0, n_paths, CHUNK):
        c1 = min(n_paths, c0 + CHUNK)
        draws = [_draw_path(Q, init, T, N, seqs[p]) for p in range(c0, c1)]
        Z = np.array([d[1] for d in draws])
        jt = np.concatenate([d[0].jump_times for d in draws] + [np.empty(0)])
        jr = np.concatenate([rates[d[0].states[1:] - 1] for d in draws] + [np.empty(0)])
        jxi = np.concatenate([d[2] for d in draws] + [np.empty(0)])
        joff = np.concatenate([[0], np.cumsum([d[0].n_jumps for d in draws])]).astype(np.int64)
        r0 = np.array([rates[d[0].states[0] - 1] for d in draws])
        ns = max(0, min(store_paths - c0, c1 - c0))
        Xs = np.zeros((ns, N + 1, n))
        Ys = np.zeros((ns, N + 1, n))
        st = np.empty((c1 - c0, 4))
        sim(times, m["D"], m["S"], m["J"], m["Ax"], m["Ay"], table.L[:-1].copy(), table.P[:-1].copy(),
            table.Kend, table.K[0], table.swap, dual_node, x0, y0, Z, jt, jr, jxi, joff, r0, ns, Xs, Ys, st)
        stats[c0:c1] = st
        for k in range(ns):
            chain = draws[k][0]
            x, y, z, th = _to_primal(table, Xs[k], Ys[k])
            res = dict(zip(("x0_norm", "yT_norm", "sup_x_norm", "decouple_resid"), map(float, st[k])))
            stored.append(EigenfunctionPath(
                path_id=c0 + k, times=times, states=chain.state_at(times), x=x, y=y, z=z, theta=th,
                segments=np.append(table.step_segment, table.step_segment[-1]),
                families=np.append(table.step_family, table.step_family[-1]), residuals=res,
            ))
    return stored, _report_from_stats(stats)
