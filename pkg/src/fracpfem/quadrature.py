"""Quadrature for nonlocal P1 assembly.

Pairs of elements are classified by adjacency (identical, edge-touching,
vertex-touching, disjoint). Touching classes are integrated after a change
of variables that turns the kernel singularity into a known radial power at
the origin, which a tau^m substitution then absorbs; disjoint pairs get
tensorized Gauss rules. The module also builds the per-element rules and
closed-form radial integrals used for the exterior (complement) terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import exp1, gammaincc, roots_jacobi

from .kernel import KernelSpec  # noqa: F401  (re-exported for context builders)


@dataclass
class QuadConfig:
    """Quadrature orders and cutoffs.

    order_disjoint: tensor order for disjoint pairs inside the far-field
        cutoff; order_far applies beyond far_field_factor * max(h_A, h_B).
    order_singular: base order of the singular-pair rules (identical and
        edge-touching classes); the vertex-touching class uses the smaller
        order_vertex since its integrand is the mildest and the rule is a
        4-fold tensor.
    outer_radius_factor is accepted for interface compatibility; the
    complement integrals are evaluated exactly in the radial variable, so
    no outer truncation radius enters.
    """

    order_disjoint: int = 6
    order_far: int = 3
    order_singular: int = 8
    order_vertex: int = 4
    far_field_factor: float = 5.0
    outer_radius_factor: float = 2.0
    order_tail: int = 4
    tail_levels_1d: int = 10
    tail_levels_2d: int = 5
    tail_order_angular: int = 12

    def key(self):
        return (
            self.order_disjoint, self.order_far, self.order_singular,
            self.order_vertex, self.far_field_factor, self.order_tail,
            self.tail_levels_1d, self.tail_levels_2d, self.tail_order_angular,
        )


def gauss01(k):
    """k-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_jacobi01(k):
    """k-point rule for integrals of the form int_0^1 (1-u) g(u) du."""
    x, w = roots_jacobi(k, 1.0, 0.0)
    return 0.5 * (x + 1.0), 0.25 * w


def triangle_rule(k):
    """Conical product rule on the reference triangle {x,y >= 0, x+y <= 1}.

    k^2 points, positive weights, exact for total degree 2k-1; the weights
    sum to the triangle area 1/2.
    """
    u, wu = gauss_jacobi01(k)
    v, wv = gauss01(k)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([U.ravel(), (V * (1.0 - U)).ravel()], axis=1)
    w = np.outer(wu, wv).ravel()
    return pts, w


def m_exponent(s, p):
    """Radial substitution exponent m(s, p) = max(4, ceil(3 / (p(1-s)))).

    The pair integrands reduce to r^(p(1-s)-1) dr near r = 0; r = tau^m
    makes this tau^(m p (1-s) - 1) dtau, smooth once m p (1-s) >= 3.
    """
    return max(4, math.ceil(3.0 / (p * (1.0 - s))))


# -- pair classification and generic pair rules ------------------------


@dataclass
class PairRule:
    """Quadrature nodes for a double integral over a pair of elements:
    sum_q w[q] f(x[q], y[q]) approximates int_A int_B f."""

    cls: str
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray


def classify_pair(mesh, a, b):
    """Adjacency class of elements a, b: identical, edge, vertex, disjoint."""
    if a == b:
        return "identical"
    shared = np.intersect1d(mesh.elems[a], mesh.elems[b]).size
    if shared == 0:
        return "disjoint"
    if mesh.d == 1:
        return "vertex"
    return "edge" if shared == 2 else "vertex"


def pair_rule(mesh, a, b, k=None, m=4):
    """Quadrature rule for int_A int_B f(x, y) dy dx.

    Touching classes use singularity-absorbing coordinates with radial
    substitution exponent m; weights are positive and sum to |A| |B|
    exactly. Default order is 8 for touching classes and 6 for disjoint
    pairs. The rule is kernel-independent (meant for moderate s; the
    assembly contexts build kernel-adapted tables instead).
    """
    cls = classify_pair(mesh, a, b)
    if k is None:
        k = 6 if cls == "disjoint" else 8
    if mesh.d == 1:
        x0, x1 = mesh.coords[mesh.elems[a], 0]
        y0, y1 = mesh.coords[mesh.elems[b], 0]
        if cls == "identical":
            x, y, w = _rule_identical_1d(x0, x1, k, m)
        elif cls == "vertex":
            x, y, w = _rule_touching_1d(x0, x1, y0, y1, k, m)
        else:
            x, y, w = _rule_disjoint_1d(x0, x1, y0, y1, k)
        return PairRule(cls, x[:, None], y[:, None], w)
    ta = mesh.coords[mesh.elems[a]]
    tb = mesh.coords[mesh.elems[b]]
    if cls == "identical":
        x, y, w = _rule_identical_2d(ta, k, m)
    elif cls == "edge":
        x, y, w = _rule_edge_2d(mesh, a, b, k, m)
    elif cls == "vertex":
        x, y, w = _rule_vertex_2d(mesh, a, b, k, m)
    else:
        x, y, w = _rule_disjoint_2d(ta, tb, k)
    return PairRule(cls, x, y, w)


def _rule_identical_1d(x0, x1, k, m):
    h = x1 - x0
    kr = max(k, 2 * m)
    tau, wt = gauss01(kr)
    g, wg = gauss01(k)
    t = h * tau ** m
    jac = h * m * tau ** (m - 1) * wt
    X, G = np.meshgrid(np.arange(kr), np.arange(k), indexing="ij")
    tt = t[X.ravel()]
    xx = x0 + (h - tt) * g[G.ravel()]
    ww = jac[X.ravel()] * (h - tt) * wg[G.ravel()]
    x = np.concatenate([xx, xx + tt])
    y = np.concatenate([xx + tt, xx])
    return x, y, np.concatenate([ww, ww])


def _rule_touching_1d(x0, x1, y0, y1, k, m):
    # orient so the shared vertex sits between the elements
    if abs(x1 - y0) < abs(x0 - y1):
        v, ha, hb, sa, sb = x1, x1 - x0, y1 - y0, -1.0, 1.0
    else:
        v, ha, hb, sa, sb = x0, x1 - x0, y1 - y0, 1.0, -1.0
    kr = max(k, 2 * m)
    tau, wt = gauss01(kr)
    z, wz = gauss01(k)
    wfrac = tau ** m
    coef = m * tau ** (2 * m - 1) * wt
    W, Z = np.meshgrid(np.arange(kr), np.arange(k), indexing="ij")
    w_r, z_r = wfrac[W.ravel()], z[Z.ravel()]
    base_w = ha * hb * coef[W.ravel()] * wz[Z.ravel()]
    # region 1: a = ha*w, b = hb*w*z ; region 2 mirrors the roles
    x1n = v + sa * ha * w_r
    y1n = v + sb * hb * w_r * z_r
    x2n = v + sa * ha * w_r * z_r
    y2n = v + sb * hb * w_r
    return (
        np.concatenate([x1n, x2n]),
        np.concatenate([y1n, y2n]),
        np.concatenate([base_w, base_w]),
    )


def _rule_disjoint_1d(x0, x1, y0, y1, k):
    g, wg = gauss01(k)
    X, Y = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    x = x0 + (x1 - x0) * g[X.ravel()]
    y = y0 + (y1 - y0) * g[Y.ravel()]
    w = (x1 - x0) * (y1 - y0) * wg[X.ravel()] * wg[Y.ravel()]
    return x, y, w


HEX_VERTS = np.array(
    [(1.0, 0.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, -1.0)]
)


def _clip_area(z):
    """Area of K ^ (K + z) for the unit reference triangle K."""
    poly = _clip_polygon(z)
    if len(poly) < 3:
        return 0.0
    area = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % len(poly)]
        area += x0 * y1 - x1 * y0
    return 0.5 * abs(area)


def identical_table_2d(s, p, k):
    """Difference-variable table for int_T int_T f(x - y) dy dx.

    With x = F(X), y = F(Y) and Z = X - Y the double integral becomes
    |det M|^2 int_D f(M Z) A(Z) dZ over the hexagon D = K - K, where A(Z)
    is the area of K ^ (K + Z) (piecewise quadratic, one piece per sector
    spanned by consecutive hexagon vertices). Each sector triangle is
    integrated with a radial tau^m substitution toward the origin.

    Returns (zhat, w): evaluate sum w[i] f(M zhat[i]) and scale by
    |det M|^2 = 4 |T|^2 .
    """
    m = m_exponent(s, p)
    kr = max(k, (3 * m) // 2 + 1)
    tau, wt = gauss01(kr)
    q, wq = gauss01(k)
    zeta = tau ** m
    wz = m * tau ** (2 * m - 1) * wt
    zh = []
    w = []
    for i in range(6):
        v0 = HEX_VERTS[i]
        v1 = HEX_VERTS[(i + 1) % 6]
        # |v0 x v1| = 1 for all sectors of this hexagon
        for j in range(kr):
            for l in range(k):
                zz = zeta[j] * ((1.0 - q[l]) * v0 + q[l] * v1)
                a = _clip_area(zz)
                if a > 0.0:
                    zh.append(zz)
                    w.append(wz[j] * wq[l] * a)
    return np.array(zh), np.array(w)


def edge_tables_2d(s, p, k):
    """Tables for the edge-touching class.

    Pair geometry: elements A, B share the edge (v0, v1); with E = v1-v0,
    Abar = a2-v0, Bbar = b2-v0 (a2, b2 the opposite vertices) the
    difference x - y on the region {xi_A >= xi_B} scales as
    r (uhat E + alpha Abar - beta Bbar), (uhat, alpha, beta) = (1-a-b, a, b)
    on the unit simplex, r in (0, 1/c(b)), c = max(1-b, b). The inner
    coordinate xi_B contributes the exact factor (1 - r c). Returns
    ((a, b, wab, c), (rho, wrho)) with rho = r c; the weight product is
    wab * wrho / c^3 and the physical factor 4 |T_A| |T_B| (the opposite
    orientation covers {xi_A <= xi_B}).
    """
    m = m_exponent(s, p)
    kr = max(k, 2 * m)
    tau, wt = gauss01(kr)
    rho = tau ** m
    wrho = m * tau ** (3 * m - 1) * (1.0 - rho) * wt
    qa, wa = gauss01(k)
    qb, wb = gauss01(k + 2)
    a_nodes, b_nodes, w_nodes = [], [], []
    for half in (0, 1):
        for j in range(k + 2):
            b = 0.5 * qb[j] if half == 0 else 0.5 * (1.0 + qb[j])
            for i in range(k):
                a = qa[i] * (1.0 - b)
                a_nodes.append(a)
                b_nodes.append(b)
                w_nodes.append(0.5 * (1.0 - b) * wa[i] * wb[j])
    a_nodes = np.array(a_nodes)
    b_nodes = np.array(b_nodes)
    w_nodes = np.array(w_nodes)
    c_nodes = np.maximum(1.0 - b_nodes, b_nodes)
    return (a_nodes, b_nodes, w_nodes, c_nodes), (rho, wrho)


def vertex_tables_2d(s, p, k):
    """Tables for the vertex-touching class.

    Elements A, B share the vertex v0; barycentric scaling gives
    x - y = r (P_A - t P_B) on {lambda_B <= lambda_A} with measure
    r^3 t dr dt dw_A dw_B (the complementary region swaps A and B).
    Returns ((t, wa, wb, wtot), (rho, wrho)); physical factor
    4 |T_A| |T_B|.
    """
    m = m_exponent(s, p)
    kr = max(6, (3 * m) // 2 + 1)
    tau, wt = gauss01(kr)
    rho = tau ** m
    wrho = m * tau ** (4 * m - 1) * wt
    g, wg = gauss01(k)
    T, WA, WB = np.meshgrid(np.arange(k), np.arange(k), np.arange(k), indexing="ij")
    t = g[T.ravel()]
    wa = g[WA.ravel()]
    wb = g[WB.ravel()]
    wtot = t * wg[T.ravel()] * wg[WA.ravel()] * wg[WB.ravel()]
    return (t, wa, wb, wtot), (rho, wrho)


def singular_tables_1d(s, p, k):
    """Radial tables for identical and touching 1d pairs.

    identical: t = h * id_t[j], weight 2 h^2 (1 - id_t[j]) id_w[j];
    touching: w-coordinate nodes tc_w with weights tc_c (absorbing the
    area factor), tensorized with Gauss nodes (tc_z, tc_wz).
    """
    m = m_exponent(s, p)
    kr = max(k, 2 * m)
    tau, wt = gauss01(kr)
    id_t = tau ** m
    id_w = m * tau ** (m - 1) * wt
    tc_w = tau ** m
    tc_c = m * tau ** (2 * m - 1) * wt
    tc_z, tc_wz = gauss01(k)
    return {
        "id_t": id_t, "id_w": id_w,
        "tc_w": tc_w, "tc_c": tc_c, "tc_z": tc_z, "tc_wz": tc_wz,
        "m": m,
    }


def _rule_identical_2d(tri, k, m):
    kr = max(k, (3 * m) // 2 + 1)
    tau, wt = gauss01(kr)
    zeta = tau ** m
    wz = m * tau ** (2 * m - 1) * wt
    q, wq = gauss01(k)
    fpts, fw = triangle_rule(3)
    Mcols = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)
    detsq = (Mcols[0, 0] * Mcols[1, 1] - Mcols[0, 1] * Mcols[1, 0]) ** 2
    xs, ys, ws = [], [], []
    for i in range(6):
        v0 = HEX_VERTS[i]
        v1 = HEX_VERTS[(i + 1) % 6]
        for j in range(kr):
            for l in range(k):
                zz = zeta[j] * ((1.0 - q[l]) * v0 + q[l] * v1)
                poly = _clip_polygon(zz)
                if len(poly) < 3:
                    continue
                base = wz[j] * wq[l]
                for t in range(1, len(poly) - 1):
                    a0, a1, a2 = poly[0], poly[t], poly[t + 1]
                    area2 = abs(
                        (a1[0] - a0[0]) * (a2[1] - a0[1])
                        - (a1[1] - a0[1]) * (a2[0] - a0[0])
                    )
                    if area2 == 0.0:
                        continue
                    for fp, fwt in zip(fpts, fw):
                        X = (
                            np.asarray(a0)
                            + fp[0] * (np.asarray(a1) - np.asarray(a0))
                            + fp[1] * (np.asarray(a2) - np.asarray(a0))
                        )
                        Y = X - zz
                        xs.append(tri[0] + Mcols @ X)
                        ys.append(tri[0] + Mcols @ Y)
                        ws.append(detsq * base * area2 * fwt)
    return np.array(xs), np.array(ys), np.array(ws)


def _clip_polygon(z):
    poly = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    zx, zy = z
    for a, b, c in ((-1.0, 0.0, -zx), (0.0, -1.0, -zy), (1.0, 1.0, 1.0 + zx + zy)):
        out = []
        n = len(poly)
        for i in range(n):
            px, py = poly[i]
            qx, qy = poly[(i + 1) % n]
            pin = a * px + b * py <= c + 1e-14
            qin = a * qx + b * qy <= c + 1e-14
            if pin:
                out.append((px, py))
            if pin != qin:
                t = (c - a * px - b * py) / (a * (qx - px) + b * (qy - py))
                out.append((px + t * (qx - px), py + t * (qy - py)))
        poly = out
        if len(poly) < 3:
            return []
    return poly


def _shared_edge_data(mesh, a, b):
    ea, eb = mesh.elems[a], mesh.elems[b]
    shared = np.intersect1d(ea, eb)
    v0, v1 = int(shared[0]), int(shared[1])
    a2 = int(ea[~np.isin(ea, shared)][0])
    b2 = int(eb[~np.isin(eb, shared)][0])
    return v0, v1, a2, b2


def _rule_edge_2d(mesh, a, b, k, m):
    v0, v1, a2, b2 = _shared_edge_data(mesh, a, b)
    P0 = mesh.coords[v0]
    E = mesh.coords[v1] - P0
    Abar = mesh.coords[a2] - P0
    Bbar = mesh.coords[b2] - P0
    vols = _tri_area(mesh.coords[mesh.elems[a]]), _tri_area(mesh.coords[mesh.elems[b]])
    jac = 4.0 * vols[0] * vols[1]
    kr = max(k, 2 * m)
    tau, wt = gauss01(kr)
    rho = tau ** m
    wrho_meas = m * tau ** (3 * m - 1) * wt  # rho^2 included; (1-rho c /c ...) handled below
    qa, wa = gauss01(k)
    qb, wb = gauss01(k + 4)
    gx, gw = gauss01(k)
    xs, ys, ws = [], [], []
    for orient in (0, 1):
        Ac = Abar if orient == 0 else Bbar
        Bc = Bbar if orient == 0 else Abar
        for half in (0, 1):
            for j in range(k + 4):
                bb = 0.5 * qb[j] if half == 0 else 0.5 * (1.0 + qb[j])
                c = max(1.0 - bb, bb)
                for i in range(k):
                    aa = qa[i] * (1.0 - bb)
                    wab = 0.5 * (1.0 - bb) * wa[i] * wb[j]
                    uh, al, be = 1.0 - aa - bb, aa, bb
                    for r_i in range(kr):
                        r = rho[r_i] / c
                        wr = wrho_meas[r_i] / c ** 3
                        L = 1.0 - rho[r_i]
                        for l in range(k):
                            xib = L * gx[l]
                            x = P0 + (xib + r * uh) * E + r * al * Ac
                            y = P0 + xib * E + r * be * Bc
                            # orientation 1 parameterizes B x A; swap back
                            # so emitted x stays in A and y in B
                            if orient == 0:
                                xs.append(x)
                                ys.append(y)
                            else:
                                xs.append(y)
                                ys.append(x)
                            ws.append(jac * wab * wr * L * gw[l])
    return np.array(xs), np.array(ys), np.array(ws)


def _rule_vertex_2d(mesh, a, b, k, m):
    ea, eb = mesh.elems[a], mesh.elems[b]
    shared = np.intersect1d(ea, eb)
    v0 = int(shared[0])
    arest = ea[ea != v0]
    brest = eb[eb != v0]
    P0 = mesh.coords[v0]
    EA1, EA2 = mesh.coords[arest[0]] - P0, mesh.coords[arest[1]] - P0
    EB1, EB2 = mesh.coords[brest[0]] - P0, mesh.coords[brest[1]] - P0
    jac = 4.0 * _tri_area(mesh.coords[ea]) * _tri_area(mesh.coords[eb])
    kr = max(k, 2 * m)
    tau, wt = gauss01(kr)
    rho = tau ** m
    wr = m * tau ** (4 * m - 1) * wt
    g, wg = gauss01(k)
    xs, ys, ws = [], [], []
    for region in (0, 1):
        for j in range(kr):
            for it in range(k):
                t = g[it]
                for ia in range(k):
                    PA = (1.0 - g[ia]) * EA1 + g[ia] * EA2
                    for ib in range(k):
                        PB = (1.0 - g[ib]) * EB1 + g[ib] * EB2
                        r = rho[j]
                        wtot = jac * wr[j] * t * wg[it] * wg[ia] * wg[ib]
                        if region == 0:
                            x = P0 + r * PA
                            y = P0 + r * t * PB
                        else:
                            x = P0 + r * t * PA
                            y = P0 + r * PB
                        xs.append(x)
                        ys.append(y)
                        ws.append(wtot)
    return np.array(xs), np.array(ys), np.array(ws)


def _rule_disjoint_2d(ta, tb, k):
    pts, w = triangle_rule(k)
    xa = ta[0] + pts @ np.stack([ta[1] - ta[0], ta[2] - ta[0]])
    xb = tb[0] + pts @ np.stack([tb[1] - tb[0], tb[2] - tb[0]])
    wa = 2.0 * _tri_area(ta) * w
    wb = 2.0 * _tri_area(tb) * w
    n = pts.shape[0]
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return xa[I.ravel()], xb[J.ravel()], (wa[I.ravel()] * wb[J.ravel()])


def _tri_area(t):
    return 0.5 * abs(
        (t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1])
        - (t[1, 1] - t[0, 1]) * (t[2, 0] - t[0, 0])
    )


# -- exterior (complement) radial integrals -----------------------------


def upper_gamma(a, x):
    """Upper incomplete gamma Gamma(a, x) for a <= 1, x > 0 (vectorized),
    extended to a <= 0 by the recurrence Gamma(a, x) =
    (Gamma(a+1, x) - x^a e^(-x)) / a."""
    x = np.asarray(x, dtype=float)
    n = max(0, math.ceil(-a))
    a0 = a + n
    if abs(a0) < 1e-12:
        g = exp1(x)
        a0 = 0.0
    else:
        g = math.gamma(a0) * gammaincc(a0, x)
    b = a0
    for _ in range(n):
        b -= 1.0
        g = (g - x ** b * np.exp(-x)) / b
    return g


def _radial_tail_primitive(spec, r):
    """G(r) = int_r^inf psi(t/delta) t^(-1-sp) dt, vectorized, G(inf) = 0."""
    sp = spec.s * spec.p
    r = np.asarray(r, dtype=float)
    if spec.family == "pure_fractional":
        return r ** (-sp) / sp
    if spec.family == "truncated":
        return (np.minimum(r, spec.delta) ** (-sp) - spec.delta ** (-sp)) / sp
    if spec.family == "tempered":
        return spec.delta ** (-sp) * upper_gamma(-sp, r / spec.delta)
    return _custom_tail_primitive(spec, r)


def _custom_tail_primitive(spec, r):
    """Exterior primitive for a tabulated psi: the interpolant is linear on
    each table cell and zero past the last knot, so the integral of
    (a + b rho) rho^(-1-sp) is elementary cell by cell."""
    grid, vals = spec.psi_table
    sp = spec.s * spec.p
    lo = np.atleast_1d(np.asarray(r, dtype=float)) / spec.delta
    g0, g1 = grid[:-1], grid[1:]
    b = (vals[1:] - vals[:-1]) / (g1 - g0)
    a = vals[:-1] - b * g0

    def anti(rho, aa, bb):
        if sp == 1.0:
            return -aa / rho + bb * np.log(rho)
        return aa * rho ** (-sp) / (-sp) + bb * rho ** (1.0 - sp) / (1.0 - sp)

    # suffix[j] = full integral over cells j..end (cell 0 is excluded from
    # the sums below unless entered partially, so its left-end singularity
    # never gets evaluated)
    cell = anti(g1[1:], a[1:], b[1:]) - anti(g0[1:], a[1:], b[1:])
    suffix = np.zeros(g0.size + 1)
    suffix[1:-1] = np.cumsum(cell[::-1])[::-1]
    idx = np.clip(np.searchsorted(grid, lo, side="right") - 1, 0, g0.size - 1)
    inside = lo < grid[-1]
    safe_lo = np.where(inside, np.maximum(lo, 1e-300), grid[-1])
    part = anti(g1[idx], a[idx], b[idx]) - anti(safe_lo, a[idx], b[idx])
    out = np.where(inside, part + suffix[idx + 1], 0.0)
    out = out * spec.delta ** (-sp)
    return out if np.ndim(r) else float(out[0])


def tail_factor_interval(spec, x, a, b):
    """Exterior factor T(x) = int_{R \\ (a,b)} psi(|x-y|/delta)
    |x-y|^(-1-sp) dy for x in (a, b), in closed form."""
    x = np.asarray(x, dtype=float)
    return _radial_tail_primitive(spec, b - x) + _radial_tail_primitive(spec, x - a)


def boundary_polygon(mesh):
    """Outer boundary of a 2d mesh as a CCW vertex loop with collinear
    runs merged (recovers the domain polygon)."""
    facets = mesh.boundary_facets()
    nxt = {}
    for v0, v1 in facets:
        nxt.setdefault(int(v0), []).append(int(v1))
        nxt.setdefault(int(v1), []).append(int(v0))
    start = min(nxt)
    loop = [start]
    prev = None
    cur = start
    while True:
        cand = [v for v in nxt[cur] if v != prev]
        nxt_v = cand[0]
        if nxt_v == start:
            break
        loop.append(nxt_v)
        prev, cur = cur, nxt_v
    pts = mesh.coords[loop]
    area2 = np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
    if area2 < 0.0:
        pts = pts[::-1]
    keep = []
    n = len(pts)
    for i in range(n):
        d0 = pts[i] - pts[i - 1]
        d1 = pts[(i + 1) % n] - pts[i]
        if abs(d0[0] * d1[1] - d0[1] * d1[0]) > 1e-12 * (
            np.linalg.norm(d0) * np.linalg.norm(d1)
        ):
            keep.append(i)
    return pts[keep]


def tail_points_2d(spec, pts, polygon, k_theta=12):
    """Exterior factor T(x) = int_{complement} psi |x-y|^(-2-sp) dy at each
    row of pts (points inside the polygon).

    Polar decomposition about x: the radial integral over each exterior
    segment of a ray is the closed form G(r_in) - G(r_out); the angular
    integral is Gauss quadrature on the arcs between polygon-vertex
    directions (where the crossing pattern changes).
    """
    verts = np.asarray(polygon, dtype=float)
    nvert = verts.shape[0]
    e0 = verts
    e1 = np.roll(verts, -1, axis=0)
    ed = e1 - e0
    g, wg = gauss01(k_theta)
    out = np.empty(pts.shape[0])
    for i, x in enumerate(np.atleast_2d(pts)):
        ang = np.sort(np.arctan2(verts[:, 1] - x[1], verts[:, 0] - x[0]))
        arcs_lo = ang
        arcs_hi = np.concatenate([ang[1:], [ang[0] + 2.0 * math.pi]])
        widths = arcs_hi - arcs_lo
        live = widths > 1e-14
        th = (arcs_lo[live, None] + widths[live, None] * g[None, :]).ravel()
        wth = (widths[live, None] * wg[None, :]).ravel()
        cx, sx = np.cos(th), np.sin(th)
        # ray x + r (cx, sx) against segment e0 + t ed
        rel = e0 - x
        den = cx[:, None] * ed[None, :, 1] - sx[:, None] * ed[None, :, 0]
        num_r = rel[None, :, 0] * ed[None, :, 1] - rel[None, :, 1] * ed[None, :, 0]
        num_t = rel[None, :, 0] * sx[:, None] - rel[None, :, 1] * cx[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = num_r / den
            t = num_t / den
        bad = (np.abs(den) < 1e-14) | (t < 0.0) | (t > 1.0) | (r <= 1e-13)
        r = np.where(bad, np.inf, r)
        r.sort(axis=1)
        G = np.where(np.isfinite(r), _radial_tail_primitive(spec, np.where(np.isfinite(r), r, 1.0)), 0.0)
        signs = np.where(np.arange(nvert) % 2 == 0, 1.0, -1.0)
        out[i] = float(np.dot(wth, G @ signs))
    return out


# -- per-element rules for volume terms ---------------------------------


def element_rule(mesh, k):
    """Per-element volume rule: (nodes (ne, nq, d), weights (ne, nq),
    reference basis values (nq, d+1))."""
    if mesh.d == 1:
        g, wg = gauss01(k)
        x0 = mesh.coords[mesh.elems[:, 0], 0]
        h = mesh.coords[mesh.elems[:, 1], 0] - x0
        nodes = (x0[:, None] + h[:, None] * g[None, :])[:, :, None]
        w = h[:, None] * wg[None, :]
        basis = np.stack([1.0 - g, g], axis=1)
        return nodes, w, basis
    pts, wr = triangle_rule(k)
    p = mesh.coords[mesh.elems]
    nodes = p[:, 0, None, :] + np.einsum(
        "qk,nkd->nqd", pts, p[:, 1:, :] - p[:, 0, None, :]
    )
    vols = mesh.volumes()
    w = 2.0 * vols[:, None] * wr[None, :]
    basis = np.stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
    return nodes, w, basis


def _graded_segments(lo, hi, toward_lo, levels):
    """Geometric subdivision of [lo, hi] accumulating toward one end."""
    cuts = [lo + (hi - lo) * 0.5 ** l for l in range(levels, 0, -1)]
    pts = [lo] + cuts + [hi]
    segs = [(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    if not toward_lo:
        segs = [(lo + hi - b, lo + hi - a) for a, b in segs][::-1]
    return segs


@dataclass
class TailRule:
    """Volume rule with exterior factors: nodes xq, weights wq, tail
    values, P1 basis values and global vertex ids per node."""

    xq: np.ndarray
    wq: np.ndarray
    tail: np.ndarray
    basis: np.ndarray
    verts: np.ndarray


def tail_rule(mesh, spec, quad=None):
    """Build the x-integration rule for the exterior terms: plain rule on
    interior elements, geometrically graded composite rule on
    boundary-touching elements (the exterior factor blows up there)."""
    quad = quad or QuadConfig()
    k = quad.order_tail
    if mesh.d == 1:
        return _tail_rule_1d(mesh, spec, k, quad.tail_levels_1d)
    return _tail_rule_2d(mesh, spec, k, quad.tail_levels_2d, quad.tail_order_angular)


def _tail_rule_1d(mesh, spec, k, levels):
    a = float(mesh.coords[:, 0].min())
    b = float(mesh.coords[:, 0].max())
    g, wg = gauss01(k)
    xs, ws, bas, vts = [], [], [], []
    for e in range(mesh.n_elements):
        v = mesh.elems[e]
        x0, x1 = mesh.coords[v, 0]
        touch_lo = mesh.boundary[v[0]]
        touch_hi = mesh.boundary[v[1]]
        if touch_lo or touch_hi:
            segs = _graded_segments(x0, x1, bool(touch_lo), levels)
        else:
            segs = [(x0, x1)]
        for s0, s1 in segs:
            x = s0 + (s1 - s0) * g
            xs.append(x)
            ws.append((s1 - s0) * wg)
            lam = (x - x0) / (x1 - x0)
            bas.append(np.stack([1.0 - lam, lam], axis=1))
            vts.append(np.tile(v, (k, 1)))
    xq = np.concatenate(xs)[:, None]
    tail = tail_factor_interval(spec, xq[:, 0], a, b)
    return TailRule(xq, np.concatenate(ws), tail, np.vstack(bas), np.vstack(vts))


def _tail_rule_2d(mesh, spec, k, levels, k_theta):
    polygon = boundary_polygon(mesh)
    pts_ref, w_ref = triangle_rule(k)
    xs, ws, bas, vts = [], [], [], []
    bdist_cache = {}

    def vertex_on_boundary(pt):
        key = (round(pt[0], 14), round(pt[1], 14))
        if key not in bdist_cache:
            d = np.inf
            n = polygon.shape[0]
            for i in range(n):
                d = min(d, _pt_seg(pt, polygon[i], polygon[(i + 1) % n]))
            bdist_cache[key] = d < 1e-12
        return bdist_cache[key]

    for e in range(mesh.n_elements):
        v = mesh.elems[e]
        tri = mesh.coords[v]
        leaves = []
        if mesh.boundary[v].any():
            stack = [(tri, 0)]
            while stack:
                cur, lev = stack.pop()
                touching = any(vertex_on_boundary(cur[i]) for i in range(3))
                if not touching or lev >= levels:
                    leaves.append(cur)
                    continue
                m01 = 0.5 * (cur[0] + cur[1])
                m12 = 0.5 * (cur[1] + cur[2])
                m20 = 0.5 * (cur[2] + cur[0])
                for child in (
                    np.array([cur[0], m01, m20]),
                    np.array([m01, cur[1], m12]),
                    np.array([m20, m12, cur[2]]),
                    np.array([m01, m12, m20]),
                ):
                    stack.append((child, lev + 1))
        else:
            leaves.append(tri)
        M = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)
        Minv = np.linalg.inv(M)
        for leaf in leaves:
            x = leaf[0] + pts_ref @ np.stack([leaf[1] - leaf[0], leaf[2] - leaf[0]])
            w = 2.0 * _tri_area(leaf) * w_ref
            lam12 = (x - tri[0]) @ Minv.T
            lam = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
            xs.append(x)
            ws.append(w)
            bas.append(lam)
            vts.append(np.tile(v, (x.shape[0], 1)))
    xq = np.vstack(xs)
    tail = tail_points_2d(spec, xq, polygon, k_theta)
    return TailRule(xq, np.concatenate(ws), tail, np.vstack(bas), np.vstack(vts))


def _pt_seg(p, a, b):
    d = b - a
    L2 = float(d @ d)
    t = min(1.0, max(0.0, float((p - a) @ d) / L2))
    q = a + t * d
    return float(np.hypot(p[0] - q[0], p[1] - q[1]))
