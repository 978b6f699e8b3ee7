"""Closed-loop Euler-Maruyama stepping of the decoupled forward system.

Per step ``i`` the gains are frozen at the left node and enter through

* ``D``: drift of x, ``S``: diffusion of x, ``J``: jump response of x;
* ``Ax``, ``Ay``: drift of y as a function of x and y;
* ``Lg``, ``Pg``: diffusion and jump response of y (z = L x-, theta = P x-).

The compensated jump martingale contributes ``-r (J x) h`` to the drift on
every substep of length ``h`` and ``J x-`` at each jump.  Steps containing
jumps are split at the jump times and the Brownian increment is refined by
Brownian bridge draws (one extra normal per jump).

``swap[i]`` marks nodes where the gain family changes; there the pair
(x, y) is exchanged, which is the identification between primal and dual
variables.
"""

import numpy as np

from ._accel import njit


@njit(cache=True, nogil=True)
def _advance(i, p, X, Y, h, dW, r, D, S, J, Ax, Ay, Lg, Pg, xn, yn):
    """One Euler substep of path ``p`` from node ``i``; result in ``xn``, ``yn``."""
    n = X.shape[1]
    for a in range(n):
        dx = 0.0
        sx = 0.0
        jx = 0.0
        ay = 0.0
        ly = 0.0
        py = 0.0
        for c in range(n):
            xc = X[p, c]
            dx += D[i, a, c] * xc
            jx += J[i, a, c] * xc
            sx += S[i, a, c] * xc
            ay += Ax[i, a, c] * xc + Ay[i, a, c] * Y[p, c]
            py += Pg[i, a, c] * xc
            ly += Lg[i, a, c] * xc
        xn[a] = X[p, a] + (dx - r * jx) * h + sx * dW
        yn[a] = Y[p, a] + (ay - r * py) * h + ly * dW


@njit(cache=True, nogil=True)
def simulate_kernel(times, D, S, J, Ax, Ay, Lg, Pg, Kend, Kstart, swap, dual_node, x0, y0,
                    Z, jt, jr, jxi, joff, r0, n_store, Xs, Ys, stats):
    """Simulate every path; ``stats[p] = (|x0|, |y_T|, sup |x|, max |y - K x|)``.

    The outer loop runs over grid steps so the gains of a step are loaded
    once for all paths.  ``x0`` and the sup statistic refer to the primal
    state, which is the stored ``y`` on nodes flagged in ``dual_node``.
    """
    npaths = Z.shape[0]
    N = times.shape[0] - 1
    n = x0.shape[0]
    X = np.empty((npaths, n))
    Y = np.empty((npaths, n))
    r = r0.astype(np.float64)
    jpos = joff[:-1].copy()
    # step-major copy of the normals so the inner loop over paths is contiguous
    Zt = np.ascontiguousarray(Z.T)
    xn = np.empty(n)
    yn = np.empty(n)
    for p in range(npaths):
        s2 = 0.0
        d2 = 0.0
        for a in range(n):
            X[p, a] = x0[a]
            Y[p, a] = y0[a]
            xp = y0[a] if dual_node[0] else x0[a]
            s2 += xp * xp
            kx = 0.0
            for c in range(n):
                kx += Kstart[a, c] * x0[c]
            d2 += (y0[a] - kx) ** 2
        stats[p, 0] = np.sqrt(s2)
        stats[p, 2] = np.sqrt(s2)
        stats[p, 3] = np.sqrt(d2)
        if p < n_store:
            for a in range(n):
                Xs[p, 0, a] = x0[a]
                Ys[p, 0, a] = y0[a]
    for i in range(N):
        ta = times[i]
        tb = times[i + 1]
        sq = np.sqrt(tb - ta)
        for p in range(npaths):
            dWtot = sq * Zt[i, p]
            wa = 0.0
            s = ta
            while jpos[p] < joff[p + 1] and jt[jpos[p]] <= tb:
                q = jpos[p]
                tj = jt[q]
                # Brownian bridge value at the jump time given W(ta) = 0, W(tb) = dWtot
                if tb > s:
                    mean = wa + (tj - s) / (tb - s) * (dWtot - wa)
                    var = (tj - s) * (tb - tj) / (tb - s)
                    wj = mean + np.sqrt(max(var, 0.0)) * jxi[q]
                else:
                    wj = dWtot
                _advance(i, p, X, Y, tj - s, wj - wa, r[p], D, S, J, Ax, Ay, Lg, Pg, xn, yn)
                for a in range(n):
                    jx = 0.0
                    py = 0.0
                    for c in range(n):
                        jx += J[i, a, c] * xn[c]
                        py += Pg[i, a, c] * xn[c]
                    X[p, a] = xn[a] + jx
                    Y[p, a] = yn[a] + py
                r[p] = jr[q]
                wa = wj
                s = tj
                jpos[p] = q + 1
            _advance(i, p, X, Y, tb - s, dWtot - wa, r[p], D, S, J, Ax, Ay, Lg, Pg, xn, yn)
            d2 = 0.0
            s2 = 0.0
            for a in range(n):
                X[p, a] = xn[a]
                Y[p, a] = yn[a]
            for a in range(n):
                kx = 0.0
                for c in range(n):
                    kx += Kend[i, a, c] * xn[c]
                e = yn[a] - kx
                d2 += e * e
                # before the swap the node is still in the family of step i
                xp = yn[a] if dual_node[i] else xn[a]
                s2 += xp * xp
            d = np.sqrt(d2)
            if d > stats[p, 3]:
                stats[p, 3] = d
            sxp = np.sqrt(s2)
            if sxp > stats[p, 2]:
                stats[p, 2] = sxp
            if swap[i + 1]:
                for a in range(n):
                    v = X[p, a]
                    X[p, a] = Y[p, a]
                    Y[p, a] = v
            if p < n_store:
                for a in range(n):
                    Xs[p, i + 1, a] = X[p, a]
                    Ys[p, i + 1, a] = Y[p, a]
    for p in range(npaths):
        yT = 0.0
        for a in range(n):
            yT += Y[p, a] * Y[p, a]
        stats[p, 1] = np.sqrt(yT)


def simulate_numpy(times, D, S, J, Ax, Ay, Lg, Pg, Kend, Kstart, swap, dual_node, x0, y0,
                   Z, jt, jr, jxi, joff, r0, n_store, Xs, Ys, stats):
    """Same contract as :func:`simulate_kernel`, vectorised across paths."""
    npaths = Z.shape[0]
    N = times.shape[0] - 1
    x = np.tile(x0, (npaths, 1))
    y = np.tile(y0, (npaths, 1))
    r = r0.astype(float).copy()
    jpos = joff[:-1].copy()
    jend = joff[1:]
    stats[:, 0] = np.linalg.norm(y if dual_node[0] else x, axis=1)
    sx = stats[:, 0].copy()
    dec = np.linalg.norm(y - x @ Kstart.T, axis=1)
    Xs[:, 0] = x[:n_store]
    Ys[:, 0] = y[:n_store]

    def sub(i, xv, yv, h, dW, rv):
        xn = xv + (xv @ D[i].T - rv[:, None] * (xv @ J[i].T)) * h[:, None] + (xv @ S[i].T) * dW[:, None]
        yn = (yv + (xv @ Ax[i].T + yv @ Ay[i].T - rv[:, None] * (xv @ Pg[i].T)) * h[:, None]
              + (xv @ Lg[i].T) * dW[:, None])
        return xn, yn

    for i in range(N):
        a, b = times[i], times[i + 1]
        dWtot = np.sqrt(b - a) * Z[:, i]
        has = (jpos < jend) & (jt[np.minimum(jpos, jt.size - 1)] <= b) if jt.size else np.zeros(npaths, bool)
        xn, yn = sub(i, x, y, np.full(npaths, b - a), dWtot, r)
        for p in np.flatnonzero(has):
            xp, yp, rp = x[p:p + 1], y[p:p + 1], r[p:p + 1].copy()
            wa, s = 0.0, a
            while jpos[p] < jend[p] and jt[jpos[p]] <= b:
                q = jpos[p]
                tj = jt[q]
                if b > s:
                    mean = wa + (tj - s) / (b - s) * (dWtot[p] - wa)
                    var = (tj - s) * (b - tj) / (b - s)
                    wj = mean + np.sqrt(max(var, 0.0)) * jxi[q]
                else:
                    wj = dWtot[p]
                xs, ys = sub(i, xp, yp, np.array([tj - s]), np.array([wj - wa]), rp)
                xp = xs + xs @ J[i].T
                yp = ys + xs @ Pg[i].T
                rp = np.array([jr[q]])
                wa, s = wj, tj
                jpos[p] += 1
            xs, ys = sub(i, xp, yp, np.array([b - s]), np.array([dWtot[p] - wa]), rp)
            xn[p], yn[p], r[p] = xs[0], ys[0], rp[0]
        x, y = xn, yn
        dec = np.maximum(dec, np.linalg.norm(y - x @ Kend[i].T, axis=1))
        sx = np.maximum(sx, np.linalg.norm(y if dual_node[i] else x, axis=1))
        if swap[i + 1]:
            x, y = y, x
        Xs[:, i + 1] = x[:n_store]
        Ys[:, i + 1] = y[:n_store]
    stats[:, 1] = np.linalg.norm(y, axis=1)
    stats[:, 2] = sx
    stats[:, 3] = dec
