# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled disjoint-pair assembly sweeps.

Mirrors fracpfem._core_numpy: same functions, same pair enumeration order,
scalar loops instead of vectorized batches. The inner loops share one
|du|^(p-2) power between the energy, gradient and jacobian factors.
"""

import numpy as np

from libc.math cimport sqrt, pow, exp, fabs

BACKEND_NAME = "compiled"


cdef struct PairAcc:
    double E
    double rx[3]
    double ry[3]
    double xx[9]
    double yy[9]
    double xy[9]


cdef inline void _acc_reset(PairAcc* acc) nogil:
    cdef int m
    acc.E = 0.0
    for m in range(3):
        acc.rx[m] = 0.0
        acc.ry[m] = 0.0
    for m in range(9):
        acc.xx[m] = 0.0
        acc.yy[m] = 0.0
        acc.xy[m] = 0.0


cdef double _pair_1d(double[:, ::1] xs, double[:, ::1] wq, double[:, ::1] ue,
                     double[::1] g, Py_ssize_t i, Py_ssize_t j,
                     long long[::1] vl, long long[::1] vr,
                     double s, double p, int fam, double delta, double c,
                     double epsabs, double rmax_s,
                     bint want_r, bint want_j,
                     double[::1] Rv, double[:, ::1] Jv) nogil:
    cdef Py_ssize_t k = g.shape[0]
    cdef Py_ssize_t a, b
    cdef double E = 0.0
    cdef double ex = -(1.0 + s * p)
    cdef double pm2 = p - 2.0
    cdef double epref = c / p
    cdef double rpref = c
    cdef double jpref = c * (p - 1.0)
    cdef double thr_hi = epsabs * rmax_s
    cdef double xa, wxa, ua, pa0, pa1, r, kap, du, adu, common, t, tj, thr
    cdef double pb0, pb1, coef
    cdef double rx0 = 0.0, rx1 = 0.0, ry0 = 0.0, ry1 = 0.0
    cdef double xx00 = 0.0, xx01 = 0.0, xx11 = 0.0
    cdef double yy00 = 0.0, yy01 = 0.0, yy11 = 0.0
    cdef double xy00 = 0.0, xy01 = 0.0, xy10 = 0.0, xy11 = 0.0
    for a in range(k):
        xa = xs[i, a]
        wxa = wq[i, a]
        ua = ue[i, a]
        pa1 = g[a]
        pa0 = 1.0 - pa1
        for b in range(k):
            r = xs[j, b] - xa
            if fam == 1 and r > delta:
                continue
            kap = pow(r, ex)
            if fam == 2:
                kap *= exp(-r / delta)
            common = wxa * wq[j, b] * kap
            du = ua - ue[j, b]
            adu = fabs(du)
            if pm2 == 0.0:
                t = 1.0
            elif adu == 0.0:
                t = 0.0
            else:
                t = pow(adu, pm2)
            E += epref * common * t * du * du
            if not (want_r or want_j):
                continue
            pb1 = g[b]
            pb0 = 1.0 - pb1
            if want_r:
                coef = rpref * common * t * du
                rx0 += coef * pa0
                rx1 += coef * pa1
                ry0 += coef * pb0
                ry1 += coef * pb1
            if want_j:
                tj = t
                if pm2 < 0.0 and adu < thr_hi:
                    thr = epsabs * pow(r, s)
                    if adu < thr:
                        tj = pow(thr, pm2)
                coef = jpref * common * tj
                xx00 += coef * pa0 * pa0
                xx01 += coef * pa0 * pa1
                xx11 += coef * pa1 * pa1
                yy00 += coef * pb0 * pb0
                yy01 += coef * pb0 * pb1
                yy11 += coef * pb1 * pb1
                xy00 += coef * pa0 * pb0
                xy01 += coef * pa0 * pb1
                xy10 += coef * pa1 * pb0
                xy11 += coef * pa1 * pb1
    cdef long long li = vl[i], ri = vr[i], lj = vl[j], rj = vr[j]
    if want_r:
        Rv[li] += rx0
        Rv[ri] += rx1
        Rv[lj] -= ry0
        Rv[rj] -= ry1
    if want_j:
        Jv[li, li] += xx00
        Jv[li, ri] += xx01
        Jv[ri, li] += xx01
        Jv[ri, ri] += xx11
        Jv[lj, lj] += yy00
        Jv[lj, rj] += yy01
        Jv[rj, lj] += yy01
        Jv[rj, rj] += yy11
        Jv[li, lj] -= xy00
        Jv[li, rj] -= xy01
        Jv[ri, lj] -= xy10
        Jv[ri, rj] -= xy11
        Jv[lj, li] -= xy00
        Jv[rj, li] -= xy01
        Jv[lj, ri] -= xy10
        Jv[rj, ri] -= xy11
    return E


cdef double _straddle_pair_1d(double[::1] xl, double[::1] xr,
                              long long[::1] vl, long long[::1] vr,
                              double[::1] uv, double[::1] g, double[::1] w,
                              Py_ssize_t i, Py_ssize_t j,
                              double s, double p, double delta, double c,
                              double epsabs, double rmax_s,
                              bint want_r, bint want_j,
                              double[::1] Rv, double[:, ::1] Jv) nogil:
    # truncated kernel, |x-y| = delta crossing the box: cut the y range at
    # y = x + delta and split the x range where that cut enters the box
    # (x = xl_j - delta) and where it leaves it (x = xr_j - delta), so the
    # cutoff never sits inside a Gauss panel
    cdef Py_ssize_t k = g.shape[0]
    cdef Py_ssize_t seg, a, b, nseg
    cdef double cut[4]
    cdef double E = 0.0
    cdef double ex = -(1.0 + s * p)
    cdef double pm2 = p - 2.0
    cdef double thr_hi = epsabs * rmax_s
    cdef double hi = xr[i] - xl[i]
    cdef double hj = xr[j] - xl[j]
    cdef double enter = xl[j] - delta
    cdef double leave = xr[j] - delta
    cdef double a0, a1, x, wx, lamx, px0, px1, yhi, ylen, y, wy, lamy
    cdef double r, kap, du, adu, common, coef, t, tj, thr, py0, py1
    cdef double uli = uv[vl[i]], uri = uv[vr[i]], ulj = uv[vl[j]], urj = uv[vr[j]]
    cdef long long li = vl[i], ri = vr[i], lj = vl[j], rj = vr[j]
    cut[0] = xl[i]
    nseg = 1
    if xl[i] < enter and enter < xr[i]:
        cut[nseg] = enter
        nseg += 1
    if xl[i] < leave and leave < xr[i]:
        cut[nseg] = leave
        nseg += 1
    cut[nseg] = xr[i]
    for seg in range(nseg):
        a0 = cut[seg]
        a1 = cut[seg + 1]
        if 0.5 * (a0 + a1) + delta <= xl[j]:
            continue
        for a in range(k):
            x = a0 + (a1 - a0) * g[a]
            wx = (a1 - a0) * w[a]
            lamx = (x - xl[i]) / hi
            px0 = 1.0 - lamx
            px1 = lamx
            yhi = x + delta
            if xr[j] < yhi:
                yhi = xr[j]
            if yhi <= xl[j]:
                continue
            ylen = yhi - xl[j]
            for b in range(k):
                y = xl[j] + ylen * g[b]
                wy = ylen * w[b]
                lamy = (y - xl[j]) / hj
                py0 = 1.0 - lamy
                py1 = lamy
                r = y - x
                kap = pow(r, ex)
                common = wx * wy * kap
                du = uli * px0 + uri * px1 - (ulj * py0 + urj * py1)
                adu = fabs(du)
                if pm2 == 0.0:
                    t = 1.0
                elif adu == 0.0:
                    t = 0.0
                else:
                    t = pow(adu, pm2)
                E += (c / p) * common * t * du * du
                if want_r:
                    coef = c * common * t * du
                    Rv[li] += coef * px0
                    Rv[ri] += coef * px1
                    Rv[lj] -= coef * py0
                    Rv[rj] -= coef * py1
                if want_j:
                    tj = t
                    if pm2 < 0.0 and adu < thr_hi:
                        thr = epsabs * pow(r, s)
                        if adu < thr:
                            tj = pow(thr, pm2)
                    coef = c * (p - 1.0) * common * tj
                    Jv[li, li] += coef * px0 * px0
                    Jv[li, ri] += coef * px0 * px1
                    Jv[ri, li] += coef * px0 * px1
                    Jv[ri, ri] += coef * px1 * px1
                    Jv[lj, lj] += coef * py0 * py0
                    Jv[lj, rj] += coef * py0 * py1
                    Jv[rj, lj] += coef * py0 * py1
                    Jv[rj, rj] += coef * py1 * py1
                    Jv[li, lj] -= coef * px0 * py0
                    Jv[li, rj] -= coef * px0 * py1
                    Jv[ri, lj] -= coef * px1 * py0
                    Jv[ri, rj] -= coef * px1 * py1
                    Jv[lj, li] -= coef * px0 * py0
                    Jv[rj, li] -= coef * px0 * py1
                    Jv[lj, ri] -= coef * px1 * py0
                    Jv[rj, ri] -= coef * px1 * py1
    return E


def disjoint_sweep_1d(double[::1] xl, double[::1] xr,
                      long long[::1] vl, long long[::1] vr,
                      double[::1] uv,
                      double[:, ::1] ue_f, double[:, ::1] ue_n,
                      double[::1] g_f, double[::1] w_f,
                      double[::1] g_n, double[::1] w_n,
                      double s, double p, int fam, double delta, double c,
                      double epsabs, double far_factor, double band_skip,
                      bint want_r, bint want_j,
                      double[::1] Rv, double[:, ::1] Jv):
    """Disjoint 1d pairs: E contribution returned, gradient/jacobian
    scattered into the vertex-indexed accumulators Rv, Jv."""
    cdef Py_ssize_t ne = xl.shape[0]
    xl_a = np.asarray(xl)
    xr_a = np.asarray(xr)
    h_a = xr_a - xl_a
    cdef double[:, ::1] xs_f = np.ascontiguousarray(xl_a[:, None] + h_a[:, None] * np.asarray(g_f)[None, :])
    cdef double[:, ::1] xs_n = np.ascontiguousarray(xl_a[:, None] + h_a[:, None] * np.asarray(g_n)[None, :])
    cdef double[:, ::1] wq_f = np.ascontiguousarray(h_a[:, None] * np.asarray(w_f)[None, :])
    cdef double[:, ::1] wq_n = np.ascontiguousarray(h_a[:, None] * np.asarray(w_n)[None, :])
    cdef double rmax_s = pow(xr[ne - 1] - xl[0], s)
    cdef double E = 0.0
    cdef Py_ssize_t i, j
    cdef double gap, hmax
    cdef bint strad
    with nogil:
        for i in range(ne - 2):
            for j in range(i + 2, ne):
                gap = xl[j] - xr[i]
                if gap > band_skip:
                    break
                strad = False
                if fam == 1:
                    strad = (xr[j] - xl[i] > delta) and (gap < delta)
                if strad:
                    E += _straddle_pair_1d(xl, xr, vl, vr, uv, g_n, w_n, i, j,
                                           s, p, delta, c, epsabs, rmax_s,
                                           want_r, want_j, Rv, Jv)
                    continue
                hmax = xr[i] - xl[i]
                if xr[j] - xl[j] > hmax:
                    hmax = xr[j] - xl[j]
                if gap > far_factor * hmax:
                    E += _pair_1d(xs_f, wq_f, ue_f, g_f, i, j, vl, vr,
                                  s, p, fam, delta, c, epsabs, rmax_s,
                                  want_r, want_j, Rv, Jv)
                else:
                    E += _pair_1d(xs_n, wq_n, ue_n, g_n, i, j, vl, vr,
                                  s, p, fam, delta, c, epsabs, rmax_s,
                                  want_r, want_j, Rv, Jv)
    return E


cdef double _pair_2d(double[:, :, ::1] nodes, double[:, ::1] wq,
                     double[:, ::1] ue, double[:, ::1] phi,
                     long long[:, ::1] verts, Py_ssize_t i, Py_ssize_t j,
                     double s, double p, int fam, double delta, double c,
                     double epsabs, double rmax_s,
                     bint want_r, bint want_j,
                     double[::1] Rv, double[:, ::1] Jv, PairAcc* acc) nogil:
    cdef Py_ssize_t k = wq.shape[1]
    cdef Py_ssize_t a, b, m, l
    cdef double ex2 = -0.5 * (2.0 + s * p)
    cdef double pm2 = p - 2.0
    cdef double epref = c / p
    cdef double rpref = c
    cdef double jpref = c * (p - 1.0)
    cdef double delta2 = delta * delta
    cdef double thr_hi = epsabs * rmax_s
    cdef double xa0, xa1, wxa, ua, dx, dy, r2, kap, du, adu, common
    cdef double t, tj, thr, coef
    cdef double pa[3]
    cdef double pb[3]
    _acc_reset(acc)
    for a in range(k):
        xa0 = nodes[i, a, 0]
        xa1 = nodes[i, a, 1]
        wxa = wq[i, a]
        ua = ue[i, a]
        pa[0] = phi[a, 0]
        pa[1] = phi[a, 1]
        pa[2] = phi[a, 2]
        for b in range(k):
            dx = xa0 - nodes[j, b, 0]
            dy = xa1 - nodes[j, b, 1]
            r2 = dx * dx + dy * dy
            if fam == 1 and r2 > delta2:
                continue
            kap = pow(r2, ex2)
            if fam == 2:
                kap *= exp(-sqrt(r2) / delta)
            common = wxa * wq[j, b] * kap
            du = ua - ue[j, b]
            adu = fabs(du)
            if pm2 == 0.0:
                t = 1.0
            elif adu == 0.0:
                t = 0.0
            else:
                t = pow(adu, pm2)
            acc.E += epref * common * t * du * du
            if not (want_r or want_j):
                continue
            pb[0] = phi[b, 0]
            pb[1] = phi[b, 1]
            pb[2] = phi[b, 2]
            if want_r:
                coef = rpref * common * t * du
                for m in range(3):
                    acc.rx[m] += coef * pa[m]
                    acc.ry[m] += coef * pb[m]
            if want_j:
                tj = t
                if pm2 < 0.0 and adu < thr_hi:
                    thr = epsabs * pow(r2, 0.5 * s)
                    if adu < thr:
                        tj = pow(thr, pm2)
                coef = jpref * common * tj
                for m in range(3):
                    for l in range(3):
                        acc.xx[3 * m + l] += coef * pa[m] * pa[l]
                        acc.yy[3 * m + l] += coef * pb[m] * pb[l]
                        acc.xy[3 * m + l] += coef * pa[m] * pb[l]
    cdef long long vi, vj
    if want_r:
        for m in range(3):
            Rv[verts[i, m]] += acc.rx[m]
            Rv[verts[j, m]] -= acc.ry[m]
    if want_j:
        for m in range(3):
            vi = verts[i, m]
            vj = verts[j, m]
            for l in range(3):
                Jv[vi, verts[i, l]] += acc.xx[3 * m + l]
                Jv[vj, verts[j, l]] += acc.yy[3 * m + l]
                Jv[vi, verts[j, l]] -= acc.xy[3 * m + l]
                Jv[verts[j, l], vi] -= acc.xy[3 * m + l]
    return acc.E


def disjoint_sweep_2d(long long[:, ::1] verts, double[::1] uv,
                      double[:, :, ::1] nodes_f, double[:, ::1] wq_f,
                      double[:, ::1] phi_f, double[:, ::1] ue_f,
                      double[:, :, ::1] nodes_n, double[:, ::1] wq_n,
                      double[:, ::1] phi_n, double[:, ::1] ue_n,
                      double[:, ::1] bary, double[::1] rad, double[::1] hd,
                      double s, double p, int fam, double delta, double c,
                      double epsabs, double far_factor, double band_skip,
                      bint want_r, bint want_j,
                      double[::1] Rv, double[:, ::1] Jv):
    """Disjoint 2d pairs (no shared vertex): E returned, R/J scattered."""
    cdef Py_ssize_t ne = verts.shape[0]
    cdef Py_ssize_t i, j, m, l
    cdef double E = 0.0
    cdef double dbx, dby, db, hmax, rmax_s, xmin, xmax, ymin, ymax, radmax
    cdef bint shared
    cdef PairAcc acc
    xmin = xmax = bary[0, 0]
    ymin = ymax = bary[0, 1]
    radmax = rad[0]
    for i in range(ne):
        if bary[i, 0] < xmin:
            xmin = bary[i, 0]
        if bary[i, 0] > xmax:
            xmax = bary[i, 0]
        if bary[i, 1] < ymin:
            ymin = bary[i, 1]
        if bary[i, 1] > ymax:
            ymax = bary[i, 1]
        if rad[i] > radmax:
            radmax = rad[i]
    dbx = xmax - xmin
    dby = ymax - ymin
    rmax_s = pow(sqrt(dbx * dbx + dby * dby) + 4.0 * radmax, s)
    with nogil:
        for i in range(ne - 1):
            for j in range(i + 1, ne):
                shared = False
                for m in range(3):
                    for l in range(3):
                        if verts[i, m] == verts[j, l]:
                            shared = True
                            break
                    if shared:
                        break
                if shared:
                    continue
                dbx = bary[j, 0] - bary[i, 0]
                dby = bary[j, 1] - bary[i, 1]
                db = sqrt(dbx * dbx + dby * dby) - rad[i] - rad[j]
                if db > band_skip:
                    continue
                hmax = hd[i]
                if hd[j] > hmax:
                    hmax = hd[j]
                if db > far_factor * hmax:
                    E += _pair_2d(nodes_f, wq_f, ue_f, phi_f, verts, i, j,
                                  s, p, fam, delta, c, epsabs, rmax_s,
                                  want_r, want_j, Rv, Jv, &acc)
                else:
                    E += _pair_2d(nodes_n, wq_n, ue_n, phi_n, verts, i, j,
                                  s, p, fam, delta, c, epsabs, rmax_s,
                                  want_r, want_j, Rv, Jv, &acc)
    return E
