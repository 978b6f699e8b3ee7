"""Scalar Riccati integrator with blow-up detection (hot loop of the spectrum search).

The one-dimensional primal and dual equations share the form

    -u'(t) = p(t) + q(t) u + r(t) u^2

with ``(p, q, r) = (b, a, c)`` for the primal family and ``(-c, -a, -b)``
for the dual family, where ``c = c0 - rho * hbar``.  The reciprocal of a
solution of one family solves the other, which is what the switching mode
exploits: once ``|u|`` passes ``switch`` the kernel continues with ``1/u`` in
the partner family, and a blow-up of the original variable shows up as a
sign change of the partner variable, localised by bisection on the cubic
Hermite interpolant of the step.

Status codes (first entry of the returned tuple):

0 reached ``t_stop``; 1 blow-up found by a partner zero crossing;
2 blow-up by norm cap; 3 blow-up by step underflow; 4 non-finite values;
5 step budget exhausted.
"""

import numpy as np

from ._accel import njit
from ._dopri import (
    A21, A31, A32, A41, A42, A43, A51, A52, A53, A54, A61, A62, A63, A64, A65,
    B1, B3, B4, B5, B6, C2, C3, C4, C5, E1, E3, E4, E5, E6, E7,
    MAX_FACTOR, MIN_FACTOR, SAFETY,
)

REACHED, CROSSING, CAP, UNDERFLOW, NONFINITE, BUDGET = 0, 1, 2, 3, 4, 5


@njit(cache=True, nogil=True)
def _coef(breaks, tab, t, j):
    if t < breaks[0]:
        t = breaks[0]
    elif t > breaks[-1]:
        t = breaks[-1]
    npieces = breaks.shape[0] - 1
    i = np.searchsorted(breaks, t, side="right") - 1
    if i < 0:
        i = 0
    elif i > npieces - 1:
        i = npieces - 1
    s = t - breaks[i]
    deg = tab.shape[1] - 1
    v = tab[i, deg, j]
    for d in range(deg - 1, -1, -1):
        v = v * s + tab[i, d, j]
    return v


@njit(cache=True, nogil=True)
def _rhs(breaks, tab, rho, mode, t, u):
    """du/dt for mode 0 (primal) or 1 (dual); table columns are a, b, c0, hbar."""
    a = _coef(breaks, tab, t, 0)
    b = _coef(breaks, tab, t, 1)
    c = _coef(breaks, tab, t, 2) - rho * _coef(breaks, tab, t, 3)
    if mode == 0:
        return -(b + a * u + c * u * u)
    return -(-c - a * u - b * u * u)


@njit(cache=True, nogil=True)
def _hermite(t0, u0, f0, t1, u1, f1, t):
    h = t1 - t0
    th = (t - t0) / h
    th2 = th * th
    th3 = th2 * th
    return ((2 * th3 - 3 * th2 + 1) * u0 + (th3 - 2 * th2 + th) * h * f0
            + (-2 * th3 + 3 * th2) * u1 + (th3 - th2) * h * f1)


@njit(cache=True, nogil=True)
def integrate_scalar(breaks, tab, rho, family, u_init, t_start, t_stop,
                     rtol, atol, cap, switch, switching, h_min, h_max, max_steps, store,
                     out_t, out_u, out_f, out_mode):
    """Integrate backward from ``t_start`` to ``t_stop`` (``t_stop < t_start``).

    Returns ``(status, t_star, t_lo, t_hi, norm_at_stop, u_last, mode_last, n_nodes)``.
    ``out_*`` receive the accepted nodes when ``store`` is true (flip nodes
    are stored twice, once per family).
    """
    t = t_start
    u = u_init
    mode = family
    f = _rhs(breaks, tab, rho, mode, t, u)
    span = t_start - t_stop
    h = -min(span, 1e-3 * max(1.0, span), h_max)
    k = 0
    if store:
        out_t[0] = t
        out_u[0] = u
        out_f[0] = f
        out_mode[0] = mode
        k = 1
    tail_t = np.empty(3)
    tail_n = np.empty(3)
    ntail = 0
    steps = 0
    while True:
        if t <= t_stop:
            return REACHED, -np.inf, -np.inf, -np.inf, abs(u), u, mode, k
        if steps >= max_steps:
            return BUDGET, np.nan, np.nan, np.nan, abs(u), u, mode, k
        if t + h < t_stop:
            h = t_stop - t
        k1 = f
        k2 = _rhs(breaks, tab, rho, mode, t + C2 * h, u + h * A21 * k1)
        k3 = _rhs(breaks, tab, rho, mode, t + C3 * h, u + h * (A31 * k1 + A32 * k2))
        k4 = _rhs(breaks, tab, rho, mode, t + C4 * h, u + h * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = _rhs(breaks, tab, rho, mode, t + C5 * h,
                  u + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = _rhs(breaks, tab, rho, mode, t + h,
                  u + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        u_new = u + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        f_new = _rhs(breaks, tab, rho, mode, t + h, u_new)
        err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * f_new)
        finite = np.isfinite(u_new) and np.isfinite(f_new) and np.isfinite(err)
        if finite:
            sc = atol + rtol * max(abs(u), abs(u_new))
            en = abs(err) / sc
        else:
            en = np.inf
        if en > 1.0:
            if finite:
                fac = max(MIN_FACTOR, SAFETY * en ** -0.2)
            else:
                fac = 0.25
            h = h * min(1.0, fac)
            if abs(h) < h_min:
                if not finite and abs(u) < 1e3:
                    return NONFINITE, np.nan, t, t, abs(u), u, mode, k
                # step collapse near a singularity: extrapolate like the cap rule
                t_star = t
                if ntail >= 2:
                    i0 = (ntail - 2) % 3
                    i1 = (ntail - 1) % 3
                    slope = (1.0 / tail_n[i1] - 1.0 / tail_n[i0]) / (tail_t[i1] - tail_t[i0])
                    if slope > 0:
                        t_star = t - (1.0 / abs(u)) / slope
                return UNDERFLOW, t_star, t_star - (t - t_star), t, abs(u), u, mode, k
            continue
        steps += 1
        t_old = t
        u_old = u
        f_old = f
        t = t + h
        u = u_new
        f = f_new
        if store:
            out_t[k] = t
            out_u[k] = u
            out_f[k] = f
            out_mode[k] = mode
            k += 1
        fac = MAX_FACTOR if en == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * en ** -0.2))
        h = max(h * fac, -h_max)
        if switching:
            if mode != family and (u == 0.0 or (u_old != 0.0 and (u_old > 0) != (u > 0))):
                lo = 0.0
                hi = 1.0
                s_old = u_old > 0
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    v = _hermite(t_old, u_old, f_old, t, u, f, t_old + mid * (t - t_old))
                    if v == 0.0:
                        lo = mid
                        hi = mid
                        break
                    if (v > 0) == s_old:
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo < 1e-16:
                        break
                ta = t_old + lo * (t - t_old)
                tb = t_old + hi * (t - t_old)
                nrm = np.inf if u_old == 0.0 else 1.0 / abs(u_old)
                return CROSSING, 0.5 * (ta + tb), tb, ta, nrm, u, mode, k
            if abs(u) > switch:
                u = 1.0 / u
                mode = 1 - mode
                f = _rhs(breaks, tab, rho, mode, t, u)
                if store:
                    out_t[k] = t
                    out_u[k] = u
                    out_f[k] = f
                    out_mode[k] = mode
                    k += 1
        else:
            nrm = abs(u)
            tail_t[ntail % 3] = t
            tail_n[ntail % 3] = nrm
            ntail += 1
            if nrm > cap:
                # 1/|u| is locally linear in t near a simple pole
                m = min(ntail, 3)
                st = 0.0
                sy = 0.0
                for i in range(m):
                    st += tail_t[i]
                    sy += 1.0 / tail_n[i]
                st /= m
                sy /= m
                num = 0.0
                den = 0.0
                for i in range(m):
                    num += (tail_t[i] - st) * (1.0 / tail_n[i] - sy)
                    den += (tail_t[i] - st) ** 2
                t_star = t
                if den > 0 and num > 0:
                    t_star = t - (1.0 / nrm) / (num / den)
                if t_star > t:
                    t_star = t
                width = t - t_star
                return CAP, t_star, t_star - width, t, nrm, u, mode, k
