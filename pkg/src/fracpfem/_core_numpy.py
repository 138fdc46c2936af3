"""NumPy implementation of the disjoint-pair assembly sweeps.

Fallback for the compiled extension; same contracts as fracpfem._core.
Element pairs are enumerated row by row (ascending indices), which fixes
the floating-point summation order and keeps results deterministic.
"""

import numpy as np

BACKEND_NAME = "numpy"


def _kappa(fam, delta, r, sp, d, psi=None):
    k = r ** (-(d + sp))
    if fam == 1:
        return np.where(r <= delta, k, 0.0)
    if fam == 2:
        return np.exp(-r / delta) * k
    if fam == 3:
        return psi(r) * k
    return k


def _du_pow(du, q):
    """|du|^q du with the q <= 0 singularity at 0 mapped to 0."""
    if q == 0.0:
        return du
    a = np.abs(du)
    safe = np.where(a == 0.0, 1.0, a)
    return np.where(a == 0.0, 0.0, safe ** q) * du


def _floor_pow(du, pm2, epsabs, rs):
    """Regularized |du|^(p-2) for p < 2: the difference quotient du / r^s
    is floored at eps before the negative power, i.e. the weight becomes
    max(|du|, eps * r^s)^(p-2)."""
    return np.maximum(np.abs(du), epsabs * rs) ** pm2


def disjoint_sweep_1d(
    xl, xr, vl, vr, uv, ue_f, ue_n, g_f, w_f, g_n, w_n,
    s, p, fam, delta, c, epsabs, far_factor, band_skip,
    want_r, want_j, Rv, Jv, psi=None,
):
    """Disjoint 1d pairs: E contribution returned, gradient/jacobian
    scattered into the vertex-indexed accumulators Rv, Jv."""
    ne = xl.shape[0]
    sp = s * p
    epref = c / p
    rpref = c
    jpref = c * (p - 1.0)
    pm2 = p - 2.0
    h = xr - xl
    xs_f = xl[:, None] + h[:, None] * g_f[None, :]
    xs_n = xl[:, None] + h[:, None] * g_n[None, :]
    phi_f = np.stack([1.0 - g_f, g_f], axis=1)
    phi_n = np.stack([1.0 - g_n, g_n], axis=1)
    wq_f = h[:, None] * w_f[None, :]
    wq_n = h[:, None] * w_n[None, :]
    E = 0.0
    for i in range(ne - 2):
        j0 = i + 2
        gap = xl[j0:] - xr[i]
        nj = int(np.searchsorted(gap, band_skip, side="right"))
        if nj == 0:
            continue
        js = np.arange(j0, j0 + nj)
        gap = gap[:nj]
        far = gap > far_factor * np.maximum(h[i], h[js])
        if fam == 1:
            strad = (xr[js] - xl[i] > delta) & (gap < delta)
        else:
            strad = np.zeros(nj, dtype=bool)
        for sel, xs, wq, ue, phi in (
            (far & ~strad, xs_f, wq_f, ue_f, phi_f),
            (~far & ~strad, xs_n, wq_n, ue_n, phi_n),
        ):
            jj = js[sel]
            if jj.size == 0:
                continue
            r = xs[jj][:, None, :] - xs[i][None, :, None]
            kap = _kappa(fam, delta, r, sp, 1, psi)
            w2 = wq[i][None, :, None] * wq[jj][:, None, :]
            du = ue[i][None, :, None] - ue[jj][:, None, :]
            common = w2 * kap
            adu = np.abs(du)
            E += epref * float(np.sum(common * adu ** p))
            if want_r:
                coef = rpref * common * _du_pow(du, pm2)
                qx = coef.sum(axis=(0, 2)) @ phi
                Rv[vl[i]] += qx[0]
                Rv[vr[i]] += qx[1]
                qy = coef.sum(axis=1) @ phi
                np.add.at(Rv, vl[jj], -qy[:, 0])
                np.add.at(Rv, vr[jj], -qy[:, 1])
            if want_j:
                if pm2 < 0.0:
                    wf = _floor_pow(du, pm2, epsabs, r ** s)
                else:
                    wf = adu ** pm2
                coef = jpref * common * wf
                _scatter_j_1d(Jv, coef, phi, vl[i], vr[i], vl[jj], vr[jj])
        jj = js[strad]
        if jj.size:
            E += _straddle_1d(
                Jv, Rv, uv, xl, xr, vl, vr, i, jj, g_n, w_n,
                s, p, delta, c, epsabs, want_r, want_j,
            )
    return E


def _scatter_j_1d(Jv, coef, phi, vli, vri, vlj, vrj):
    rows = np.array([vli, vri])
    q = coef.sum(axis=(0, 2))
    Jv[np.ix_(rows, rows)] += (phi * q[:, None]).T @ phi
    yy = np.einsum("jab,bk,bl->jkl", coef, phi, phi)
    colj = np.stack([vlj, vrj], axis=1)
    np.add.at(Jv, (colj[:, :, None], colj[:, None, :]), yy)
    xy = np.einsum("jab,ak,bl->jkl", coef, phi, phi)
    np.add.at(Jv, (rows[None, :, None], colj[:, None, :]), -xy)
    np.add.at(Jv, (colj[:, :, None], rows[None, None, :]), -np.swapaxes(xy, 1, 2))


def _straddle_1d(Jv, Rv, uv, xl, xr, vl, vr, i, jj, g, w, s, p, delta, c, epsabs, want_r, want_j):
    """Truncated-kernel pairs straddling |x-y| = delta: the y integral is
    cut at y = x + delta and the x integral is split where that cut enters
    the box (x = xl_j - delta) and where it leaves it (x = xr_j - delta),
    so the cutoff never sits inside a Gauss panel."""
    sp = s * p
    pm2 = p - 2.0
    E = 0.0
    k = g.size
    phi = np.stack([1.0 - g, g], axis=1)
    for j in jj:
        cuts = [xl[i], xr[i]]
        for cpt in (xl[j] - delta, xr[j] - delta):
            if xl[i] < cpt < xr[i]:
                cuts.append(cpt)
        cuts.sort()
        for a0, a1 in zip(cuts[:-1], cuts[1:]):
            if 0.5 * (a0 + a1) + delta <= xl[j]:
                continue
            x = a0 + (a1 - a0) * g
            wx = (a1 - a0) * w
            lamx = (x - xl[i]) / (xr[i] - xl[i])
            phix = np.stack([1.0 - lamx, lamx], axis=1)
            yhi = np.minimum(xr[j], x + delta)
            ok = yhi > xl[j]
            if not ok.any():
                continue
            x, wx, phix, yhi = x[ok], wx[ok], phix[ok], yhi[ok]
            ylen = yhi - xl[j]
            y = xl[j] + ylen[:, None] * g[None, :]
            wy = ylen[:, None] * w[None, :]
            lamy = (y - xl[j]) / (xr[j] - xl[j])
            r = y - x[:, None]
            kap = r ** (-(1.0 + sp))
            ue_x = uv[vl[i]] * phix[:, 0] + uv[vr[i]] * phix[:, 1]
            ue_y = uv[vl[j]] * (1.0 - lamy) + uv[vr[j]] * lamy
            du = ue_x[:, None] - ue_y
            common = (wx[:, None] * wy) * kap
            E += (c / p) * float(np.sum(common * np.abs(du) ** p))
            if want_r:
                coef = c * common * _du_pow(du, pm2)
                qx = coef.sum(axis=1)
                Rv[vl[i]] += float(qx @ phix[:, 0])
                Rv[vr[i]] += float(qx @ phix[:, 1])
                Rv[vl[j]] -= float(np.sum(coef * (1.0 - lamy)))
                Rv[vr[j]] -= float(np.sum(coef * lamy))
            if want_j:
                if pm2 < 0.0:
                    wf = _floor_pow(du, pm2, epsabs, r ** s)
                else:
                    wf = np.abs(du) ** pm2
                coef = c * (p - 1.0) * common * wf
                phiy = np.stack([1.0 - lamy, lamy], axis=2)
                rows = np.array([vl[i], vr[i]])
                cols = np.array([vl[j], vr[j]])
                xx = np.einsum("ab,ak,al->kl", coef, phix, phix)
                Jv[np.ix_(rows, rows)] += xx
                yy = np.einsum("ab,abk,abl->kl", coef, phiy, phiy)
                Jv[np.ix_(cols, cols)] += yy
                xy = np.einsum("ab,ak,abl->kl", coef, phix, phiy)
                Jv[np.ix_(rows, cols)] -= xy
                Jv[np.ix_(cols, rows)] -= xy.T
    return E


def disjoint_sweep_2d(
    verts, uv, nodes_f, wq_f, phi_f, ue_f, nodes_n, wq_n, phi_n, ue_n,
    bary, rad, hd,
    s, p, fam, delta, c, epsabs, far_factor, band_skip,
    want_r, want_j, Rv, Jv, psi=None,
):
    """Disjoint 2d pairs (no shared vertex): E returned, R/J scattered."""
    ne = verts.shape[0]
    sp = s * p
    epref = c / p
    rpref = c
    jpref = c * (p - 1.0)
    pm2 = p - 2.0
    vs = np.sort(verts, axis=1)
    E = 0.0
    for i in range(ne - 1):
        cand = np.arange(i + 1, ne)
        shared = (
            np.any(vs[cand] == vs[i, 0], axis=1)
            | np.any(vs[cand] == vs[i, 1], axis=1)
            | np.any(vs[cand] == vs[i, 2], axis=1)
        )
        db = (
            np.hypot(bary[cand, 0] - bary[i, 0], bary[cand, 1] - bary[i, 1])
            - rad[cand]
            - rad[i]
        )
        keep = ~shared & (db <= band_skip)
        js_all = cand[keep]
        if js_all.size == 0:
            continue
        far = db[keep] > far_factor * np.maximum(hd[i], hd[js_all])
        for sel, nodes, wq, ue, phi in (
            (far, nodes_f, wq_f, ue_f, phi_f),
            (~far, nodes_n, wq_n, ue_n, phi_n),
        ):
            js = js_all[sel]
            if js.size == 0:
                continue
            dx = nodes[i][None, :, None, 0] - nodes[js][:, None, :, 0]
            dy = nodes[i][None, :, None, 1] - nodes[js][:, None, :, 1]
            r = np.sqrt(dx * dx + dy * dy)
            kap = _kappa(fam, delta, r, sp, 2, psi)
            w2 = wq[i][None, :, None] * wq[js][:, None, :]
            du = ue[i][None, :, None] - ue[js][:, None, :]
            common = w2 * kap
            adu = np.abs(du)
            E += epref * float(np.sum(common * adu ** p))
            if want_r:
                coef = rpref * common * _du_pow(du, pm2)
                qx = coef.sum(axis=(0, 2)) @ phi
                np.add.at(Rv, verts[i], qx)
                qy = coef.sum(axis=1) @ phi
                np.add.at(Rv, verts[js], -qy)
            if want_j:
                if pm2 < 0.0:
                    wf = _floor_pow(du, pm2, epsabs, r ** s)
                else:
                    wf = adu ** pm2
                coef = jpref * common * wf
                rows = verts[i]
                cols = verts[js]
                xx = np.einsum("jab,ak,al->kl", coef, phi, phi)
                Jv[np.ix_(rows, rows)] += xx
                yy = np.einsum("jab,bk,bl->jkl", coef, phi, phi)
                np.add.at(Jv, (cols[:, :, None], cols[:, None, :]), yy)
                xy = np.einsum("jab,ak,bl->jkl", coef, phi, phi)
                np.add.at(Jv, (rows[None, :, None], cols[:, None, :]), -xy)
                np.add.at(
                    Jv, (cols[:, :, None], rows[None, None, :]), -np.swapaxes(xy, 1, 2)
                )
    return E
