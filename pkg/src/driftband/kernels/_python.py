"""Pure-numpy reference kernels.

These mirror the compiled extension operation for operation: per path, the
per-step arithmetic and accumulation order are identical, so a fixed seed
gives matching results on either backend (bit-identical where no
transcendental functions enter the loop).  Paths are vectorised across the
batch dimension; steps run sequentially.
"""

from __future__ import annotations

import numpy as np


def reflected_paths(normals, drift, x0, logphi0, u0, du, btab_lo, btab_hi,
                    mu0, mu1, eta, beta, rho, kplus, kminus, dt, disc,
                    cost_target, weighted, out):
    """Simulate reflected inventory paths at a log-likelihood-indexed band.

    normals: (B, n) standard normals; drift: (B,) observation drift per
    path; btab_lo/btab_hi: band edges tabulated on the uniform log
    likelihood grid u0 + k*du; disc: (n+1,) discount factors; out: (B, 8)
    receiving [running, up, down, total, x_T, logphi_T, P+_T, P-_T].
    Quadratic holding cost centred at cost_target.
    """
    b, n = normals.shape
    nu = btab_lo.shape[0]
    sqrtdt = np.sqrt(dt)
    ydrift = 0.5 * (mu0 + mu1)

    x = np.full(b, x0)
    logphi = np.full(b, logphi0)
    run = np.zeros(b)
    up = np.zeros(b)
    down = np.zeros(b)
    pplus = np.zeros(b)
    pminus = np.zeros(b)

    def band(u):
        pos = (u - u0) / du
        idx = np.clip(pos, 0.0, nu - 2.0).astype(np.int64)
        frac = np.clip(pos - idx, 0.0, 1.0)
        lo = btab_lo[idx] + frac * (btab_lo[idx + 1] - btab_lo[idx])
        hi = btab_hi[idx] + frac * (btab_hi[idx + 1] - btab_hi[idx])
        return lo, hi

    def weight(u):
        return 1.0 + np.exp(u) if weighted else 1.0

    # time-zero lump: project the start point into the band
    blo, bhi = band(logphi)
    w = weight(logphi)
    jump_up = np.maximum(blo - x, 0.0)
    jump_dn = np.maximum(x - bhi, 0.0)
    up += disc[0] * kplus * (w * jump_up if weighted else jump_up)
    down += disc[0] * kminus * (w * jump_dn if weighted else jump_dn)
    pplus += jump_up
    pminus += jump_dn
    x = np.minimum(np.maximum(x, blo), bhi)

    for k in range(n):
        d = x - cost_target
        hold = d * d * dt
        run += disc[k] * (w * hold if weighted else hold)
        ds = drift * dt + eta * (sqrtdt * normals[:, k])
        x = x + ds
        logphi = logphi + beta * (ds - ydrift * dt)
        blo, bhi = band(logphi)
        if weighted:
            w = weight(logphi)
        dp_up = np.maximum(blo - x, 0.0)
        dp_dn = np.maximum(x - bhi, 0.0)
        up += disc[k + 1] * kplus * (w * dp_up if weighted else dp_up)
        down += disc[k + 1] * kminus * (w * dp_dn if weighted else dp_dn)
        pplus += dp_up
        pminus += dp_dn
        x = np.minimum(np.maximum(x, blo), bhi)

    out[:, 0] = run
    out[:, 1] = up
    out[:, 2] = down
    out[:, 3] = run + up + down
    out[:, 4] = x
    out[:, 5] = logphi
    out[:, 6] = pplus
    out[:, 7] = pminus


def dynkin_paths(normals, x0, y0, mu0, eta, beta, rho, kplus, kminus, dt,
                 disc, cb_lo, cb_hi, ydrift, cost_target, out):
    """Stopped-game payoffs along uncontrolled paths.

    The second coordinate advances deterministically, so the band edges
    along it (cb_lo/cb_hi, length n+1) are precomputed.  Each path stops at
    its first band exit, collecting the exponentially weighted terminal
    payoff; until then it accumulates the weighted marginal cost.  out:
    (B, 2) receiving [payoff, stop_step (n if never stopped)].
    """
    b, n = normals.shape
    sqrtdt = np.sqrt(dt)
    x = np.full(b, x0)
    val = np.zeros(b)
    stopped = np.zeros(b, dtype=bool)
    stop_step = np.full(b, n, dtype=np.int64)

    def qval(xv, k):
        return 1.0 + np.exp(beta * (xv - (y0 + ydrift * dt * k)))

    # immediate exercise at the start point
    lo_hit = x <= cb_lo[0]
    hi_hit = (~lo_hit) & (x >= cb_hi[0])
    q0 = qval(x, 0)
    val = np.where(lo_hit, -kplus * q0, np.where(hi_hit, kminus * q0, 0.0))
    stopped = lo_hit | hi_hit
    stop_step[stopped] = 0

    for k in range(n):
        if stopped.all():
            break
        act = ~stopped
        d = x - cost_target
        q = qval(x, k)
        val = np.where(act, val + disc[k] * q * (2.0 * d) * dt, val)
        x = np.where(act, x + mu0 * dt + eta * (sqrtdt * normals[:, k]), x)
        q1 = qval(x, k + 1)
        lo_hit = act & (x <= cb_lo[k + 1])
        hi_hit = act & (~lo_hit) & (x >= cb_hi[k + 1])
        val = np.where(lo_hit, val - disc[k + 1] * kplus * q1, val)
        val = np.where(hi_hit, val + disc[k + 1] * kminus * q1, val)
        hit = lo_hit | hi_hit
        stop_step = np.where(hit, k + 1, stop_step)
        stopped = stopped | hit

    out[:, 0] = val
    out[:, 1] = stop_step


def psor_run(v, lower, upper, rhs, scale, axx, ax_up, ax_dn, by_up, by_dn,
             diag, j_order, interior_j, omega, tol, max_sweeps):
    """Projected SOR sweeps on the transposed field v[j, i].

    Gauss-Seidel in the given row order with immediate clamping onto
    [lower, upper]; returns (sweeps_done, last_relative_change).  Rows not
    in interior_j are Dirichlet data and are never touched.
    """
    ny, nx = v.shape
    change = np.inf
    sweeps = 0
    cw = axx + ax_up  # east neighbour weight
    ce = axx + ax_dn  # west neighbour weight
    for sweep in range(max_sweeps):
        change = 0.0
        for j in j_order:
            if not interior_j[j]:
                continue
            row = v[j]
            north = v[j + 1] if by_up > 0.0 else None
            south = v[j - 1] if by_dn > 0.0 else None
            for i in range(1, nx - 1):
                acc = rhs[j, i] + cw * row[i + 1] + ce * row[i - 1]
                if by_up > 0.0:
                    acc += by_up * north[i]
                if by_dn > 0.0:
                    acc += by_dn * south[i]
                vstar = acc / diag
                vnew = row[i] + omega * (vstar - row[i])
                if vnew < lower[j, i]:
                    vnew = lower[j, i]
                elif vnew > upper[j, i]:
                    vnew = upper[j, i]
                delta = abs(vnew - row[i]) / scale[j, i]
                if delta > change:
                    change = delta
                row[i] = vnew
        sweeps += 1
        if change < tol:
            break
    return sweeps, change
