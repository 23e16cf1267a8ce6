# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot-loop kernels; arithmetic mirrors kernels._python line for line."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def reflected_paths(double[:, ::1] normals, double[::1] drift, double x0,
                    double logphi0, double u0, double du,
                    double[::1] btab_lo, double[::1] btab_hi,
                    double mu0, double mu1, double eta, double beta,
                    double rho, double kplus, double kminus, double dt,
                    double[::1] disc, double cost_target, bint weighted,
                    double[:, ::1] out):
    cdef Py_ssize_t b = normals.shape[0]
    cdef Py_ssize_t n = normals.shape[1]
    cdef Py_ssize_t nu = btab_lo.shape[0]
    cdef double sqrtdt = sqrt(dt)
    cdef double ydrift = 0.5 * (mu0 + mu1)
    cdef Py_ssize_t ib, k, idx
    cdef double x, logphi, run, up, down, pplus, pminus
    cdef double blo, bhi, w, jump_up, jump_dn, d, hold, ds, dp_up, dp_dn
    cdef double pos, frac

    for ib in range(b):
        x = x0
        logphi = logphi0
        run = 0.0
        up = 0.0
        down = 0.0
        pplus = 0.0
        pminus = 0.0

        pos = (logphi - u0) / du
        if pos < 0.0:
            pos = 0.0
        elif pos > nu - 2.0:
            pos = nu - 2.0
        idx = <Py_ssize_t>pos
        frac = pos - idx
        if frac < 0.0:
            frac = 0.0
        elif frac > 1.0:
            frac = 1.0
        blo = btab_lo[idx] + frac * (btab_lo[idx + 1] - btab_lo[idx])
        bhi = btab_hi[idx] + frac * (btab_hi[idx + 1] - btab_hi[idx])
        w = 1.0 + exp(logphi) if weighted else 1.0

        jump_up = blo - x
        if jump_up < 0.0:
            jump_up = 0.0
        jump_dn = x - bhi
        if jump_dn < 0.0:
            jump_dn = 0.0
        if weighted:
            up += disc[0] * kplus * (w * jump_up)
            down += disc[0] * kminus * (w * jump_dn)
        else:
            up += disc[0] * kplus * jump_up
            down += disc[0] * kminus * jump_dn
        pplus += jump_up
        pminus += jump_dn
        if x < blo:
            x = blo
        if x > bhi:
            x = bhi

        for k in range(n):
            d = x - cost_target
            hold = d * d * dt
            if weighted:
                run += disc[k] * (w * hold)
            else:
                run += disc[k] * hold
            ds = drift[ib] * dt + eta * (sqrtdt * normals[ib, k])
            x = x + ds
            logphi = logphi + beta * (ds - ydrift * dt)

            pos = (logphi - u0) / du
            if pos < 0.0:
                pos = 0.0
            elif pos > nu - 2.0:
                pos = nu - 2.0
            idx = <Py_ssize_t>pos
            frac = pos - idx
            if frac < 0.0:
                frac = 0.0
            elif frac > 1.0:
                frac = 1.0
            blo = btab_lo[idx] + frac * (btab_lo[idx + 1] - btab_lo[idx])
            bhi = btab_hi[idx] + frac * (btab_hi[idx + 1] - btab_hi[idx])
            if weighted:
                w = 1.0 + exp(logphi)

            dp_up = blo - x
            if dp_up < 0.0:
                dp_up = 0.0
            dp_dn = x - bhi
            if dp_dn < 0.0:
                dp_dn = 0.0
            if weighted:
                up += disc[k + 1] * kplus * (w * dp_up)
                down += disc[k + 1] * kminus * (w * dp_dn)
            else:
                up += disc[k + 1] * kplus * dp_up
                down += disc[k + 1] * kminus * dp_dn
            pplus += dp_up
            pminus += dp_dn
            if x < blo:
                x = blo
            if x > bhi:
                x = bhi

        out[ib, 0] = run
        out[ib, 1] = up
        out[ib, 2] = down
        out[ib, 3] = run + up + down
        out[ib, 4] = x
        out[ib, 5] = logphi
        out[ib, 6] = pplus
        out[ib, 7] = pminus


def dynkin_paths(double[:, ::1] normals, double x0, double y0, double mu0,
                 double eta, double beta, double rho, double kplus,
                 double kminus, double dt, double[::1] disc,
                 double[::1] cb_lo, double[::1] cb_hi, double ydrift,
                 double cost_target, double[:, ::1] out):
    cdef Py_ssize_t b = normals.shape[0]
    cdef Py_ssize_t n = normals.shape[1]
    cdef double sqrtdt = sqrt(dt)
    cdef Py_ssize_t ib, k
    cdef double x, val, q, d
    cdef Py_ssize_t stop_step

    for ib in range(b):
        x = x0
        val = 0.0
        stop_step = n
        q = 1.0 + exp(beta * (x - y0))
        if x <= cb_lo[0]:
            val = -kplus * q
            stop_step = 0
        elif x >= cb_hi[0]:
            val = kminus * q
            stop_step = 0
        else:
            for k in range(n):
                d = x - cost_target
                q = 1.0 + exp(beta * (x - (y0 + ydrift * dt * k)))
                val = val + disc[k] * q * (2.0 * d) * dt
                x = x + mu0 * dt + eta * (sqrtdt * normals[ib, k])
                q = 1.0 + exp(beta * (x - (y0 + ydrift * dt * (k + 1))))
                if x <= cb_lo[k + 1]:
                    val = val - disc[k + 1] * kplus * q
                    stop_step = k + 1
                    break
                elif x >= cb_hi[k + 1]:
                    val = val + disc[k + 1] * kminus * q
                    stop_step = k + 1
                    break
        out[ib, 0] = val
        out[ib, 1] = stop_step


def psor_run(double[:, ::1] v, double[:, ::1] lower, double[:, ::1] upper,
             double[:, ::1] rhs, double[:, ::1] scale, double axx,
             double ax_up, double ax_dn, double by_up, double by_dn,
             double diag, long[::1] j_order, cnp.uint8_t[::1] interior_j,
             double omega, double tol, long max_sweeps):
    cdef Py_ssize_t ny = v.shape[0]
    cdef Py_ssize_t nx = v.shape[1]
    cdef double cw = axx + ax_up
    cdef double ce = axx + ax_dn
    cdef double change, acc, vstar, vnew, delta
    cdef Py_ssize_t sweeps = 0, jo, j, i
    cdef long sweep
    cdef bint use_up = by_up > 0.0
    cdef bint use_dn = by_dn > 0.0

    change = np.inf
    for sweep in range(max_sweeps):
        change = 0.0
        for jo in range(j_order.shape[0]):
            j = j_order[jo]
            if not interior_j[j]:
                continue
            for i in range(1, nx - 1):
                acc = rhs[j, i] + cw * v[j, i + 1] + ce * v[j, i - 1]
                if use_up:
                    acc += by_up * v[j + 1, i]
                if use_dn:
                    acc += by_dn * v[j - 1, i]
                vstar = acc / diag
                vnew = v[j, i] + omega * (vstar - v[j, i])
                if vnew < lower[j, i]:
                    vnew = lower[j, i]
                elif vnew > upper[j, i]:
                    vnew = upper[j, i]
                delta = abs(vnew - v[j, i]) / scale[j, i]
                if delta > change:
                    change = delta
                v[j, i] = vnew
        sweeps += 1
        if change < tol:
            break
    return sweeps, change
