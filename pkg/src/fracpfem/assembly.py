"""Discrete energy, gradient (residual) and Hessian (Jacobian) assembly.

The energy of a P1 function u vanishing outside the domain splits into

  * element-pair double integrals over the meshed domain, and
  * an exterior tail: for x inside, the y-integral over the complement
    reduces to |u(x)|^p times a kernel tail factor T(x).

Pairs are grouped by adjacency. Disjoint pairs go through the selected
backend sweep (compiled or numpy); identical, edge-touching and
vertex-touching pairs use the reduced singular tables from the
quadrature module, evaluated here once in vectorized numpy so both
backends share them. The residual is the exact gradient of the assembled
energy and the Jacobian the exact derivative of the residual, because
every class evaluates all three from the same nodes and weights.
"""

import numpy as np

from . import backend as _backend_mod
from .kernel import KernelSpec
from .quadrature import (
    QuadConfig,
    edge_tables_2d,
    element_rule,
    identical_table_2d,
    singular_tables_1d,
    tail_rule,
    vertex_tables_2d,
)

_CHUNK_ELEMS = 2048
_CHUNK_PAIRS = 512


class DiscreteFunction:
    """P1 function with homogeneous exterior condition: interior vertex
    coefficients only, boundary and exterior values implicitly zero."""

    def __init__(self, mesh, dof_values):
        dof_values = np.asarray(dof_values, dtype=float)
        if dof_values.shape != (mesh.ndof,):
            raise ValueError(
                "coefficient vector has length %d, mesh has %d interior vertices"
                % (dof_values.size, mesh.ndof)
            )
        if not np.all(np.isfinite(dof_values)):
            raise ValueError("non-finite coefficients")
        self.mesh = mesh
        self.dof_values = dof_values

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.ndof))

    @classmethod
    def from_vertex_values(cls, mesh, vertex_values):
        return cls(mesh, np.asarray(vertex_values, dtype=float)[mesh.interior])

    def vertex_values(self):
        uv = np.zeros(self.mesh.n_vertices)
        uv[self.mesh.interior] = self.dof_values
        return uv

    def __call__(self, pts):
        return self.mesh.eval_p1(self.vertex_values(), pts)

    def copy(self):
        return DiscreteFunction(self.mesh, self.dof_values.copy())


def _as_field(f):
    """Accept a constant or a callable of point arrays (n, d) -> (n,)."""
    if callable(f):
        return f
    val = float(f)
    return lambda pts: np.full(pts.shape[0], val)


def load_vector(mesh, f, order=4):
    """b_i = int f phi_i over interior vertices, elementwise Gauss."""
    field = _as_field(f)
    nodes, w, basis = element_rule(mesh, order)
    fv = field(nodes.reshape(-1, mesh.d)).reshape(w.shape)
    bv = np.zeros(mesh.n_vertices)
    np.add.at(bv, mesh.elems, np.einsum("eq,qk->ek", w * fv, basis))
    return bv[mesh.interior]


class AssemblyContext:
    """Precomputed interaction data for one (mesh, kernel) pair.

    Holds the element geometry arrays consumed by the disjoint-pair
    backend sweep, the singular tables for adjacent element pairs, the
    exterior tail rule, and the p<2 Jacobian regularization floor."""

    def __init__(self, mesh, spec, quad=None, eps_reg=1e-10, backend=None):
        if not isinstance(spec, KernelSpec):
            raise TypeError("spec must be a KernelSpec")
        if mesh.d != spec.d:
            raise ValueError("mesh dimension %d != kernel dimension %d" % (mesh.d, spec.d))
        if mesh.ndof < 1:
            raise ValueError("mesh has no interior vertices")
        self.mesh = mesh
        self.spec = spec
        self.quad = quad or QuadConfig()
        self.eps_reg = float(eps_reg)
        if backend is None:
            self.backend = (_backend_mod.get_backend("numpy")
                            if spec.family == "custom"
                            else _backend_mod.active_backend)
        elif isinstance(backend, str):
            self.backend = _backend_mod.get_backend(backend)
        else:
            self.backend = backend
        if spec.family == "custom" and getattr(self.backend, "BACKEND_NAME", "") != "numpy":
            raise ValueError("custom kernels require the numpy backend")
        self._build_geometry()
        self._build_singular()
        self.tail = tail_rule(mesh, spec, self.quad)
        self._load_cache = {}

    @property
    def backend_name(self):
        return getattr(self.backend, "BACKEND_NAME", "numpy")

    # -- precomputation -------------------------------------------------

    def _build_geometry(self):
        mesh, quad = self.mesh, self.quad
        self.band_skip = self.spec.delta if self.spec.family == "truncated" else np.inf
        if mesh.d == 1:
            order = np.argsort(mesh.coords[mesh.elems[:, 0], 0])
            el = mesh.elems[order]
            self.el_order = order
            self.xl = np.ascontiguousarray(mesh.coords[el[:, 0], 0])
            self.xr = np.ascontiguousarray(mesh.coords[el[:, 1], 0])
            self.vl = np.ascontiguousarray(el[:, 0], dtype=np.int64)
            self.vr = np.ascontiguousarray(el[:, 1], dtype=np.int64)
            if not np.all(self.xr > self.xl):
                raise ValueError("degenerate 1d elements")
            self.g_f, self.w_f = _gauss_cached(quad.order_far)
            self.g_n, self.w_n = _gauss_cached(quad.order_disjoint)
            self.phi_f = np.stack([1.0 - self.g_f, self.g_f], axis=1)
            self.phi_n = np.stack([1.0 - self.g_n, self.g_n], axis=1)
            return
        self.verts = np.ascontiguousarray(mesh.elems, dtype=np.int64)
        tri = mesh.coords[mesh.elems]
        self.bary = np.ascontiguousarray(tri.mean(axis=1))
        self.rad = np.ascontiguousarray(
            np.linalg.norm(tri - self.bary[:, None, :], axis=2).max(axis=1)
        )
        self.hd = np.ascontiguousarray(mesh.element_sizes())
        self.nodes_f, self.wq_f, self.phi_f = _contig3(element_rule(mesh, self.quad.order_far))
        self.nodes_n, self.wq_n, self.phi_n = _contig3(element_rule(mesh, self.quad.order_disjoint))
        # P1 gradients and the reference-to-difference map per element
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        inv = np.empty((len(tri), 2, 2))
        inv[:, 0, 0] = e2[:, 1] / det
        inv[:, 0, 1] = -e2[:, 0] / det
        inv[:, 1, 0] = -e1[:, 1] / det
        inv[:, 1, 1] = e1[:, 0] / det
        # rows of inv are gradients of the barycentric coords lam1, lam2
        g1 = inv[:, 0, :]
        g2 = inv[:, 1, :]
        self.grads = np.stack([-(g1 + g2), g1, g2], axis=1)
        self.Mcols = np.stack([e1, e2], axis=2)
        self.detsq = det ** 2

    def _build_singular(self):
        s, p, k = self.spec.s, self.spec.p, self.quad.order_singular
        if self.mesh.d == 1:
            self.tab1d = singular_tables_1d(s, p, k)
            # consecutive sorted elements must share a vertex
            if not np.all(self.vl[1:] == self.vr[:-1]):
                raise ValueError("1d mesh is not a partition of an interval")
            return
        self.id_zhat, self.id_w = identical_table_2d(s, p, k)
        (ea, eb, ew, ec), (erho, ewrho) = edge_tables_2d(s, p, k)
        uh = 1.0 - ea - eb
        self.edge_dphi = np.stack([-(uh + ea - eb), uh, ea, -eb], axis=1)
        self.edge_rtab = erho[None, :] / ec[:, None]
        self.edge_wtab = (ew / ec ** 3)[:, None] * ewrho[None, :]
        (vt, vwa, vwb, vw), (vrho, vwrho) = vertex_tables_2d(
            s, p, self.quad.order_vertex
        )
        self.vx_t, self.vx_wa, self.vx_wb = vt, vwa, vwb
        self.vx_rho = vrho
        self.vx_wtab = vw[:, None] * vwrho[None, :]
        self.vx_dphi = (
            np.stack([vt - 1.0, 1.0 - vwa, vwa, -vt * (1.0 - vwb), -vt * vwb], axis=1),
            np.stack([1.0 - vt, vt * (1.0 - vwa), vt * vwa, -(1.0 - vwb), -vwb], axis=1),
        )
        self._build_pair_lists()

    def _build_pair_lists(self):
        mesh = self.mesh
        elems = mesh.elems
        coords = mesh.coords
        vols = mesh.volumes()
        edge_owner = {}
        for e in range(mesh.n_elements):
            v = elems[e]
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = (min(v[a], v[b]), max(v[a], v[b]))
                edge_owner.setdefault(key, []).append(e)
        ev4, eE, eA, eB, ejac = [], [], [], [], []
        for (v0, v1), owners in sorted(edge_owner.items()):
            if len(owners) != 2:
                continue
            for ea, eb in ((owners[0], owners[1]), (owners[1], owners[0])):
                a2 = int(elems[ea][~np.isin(elems[ea], (v0, v1))][0])
                b2 = int(elems[eb][~np.isin(elems[eb], (v0, v1))][0])
                ev4.append((v0, v1, a2, b2))
                eE.append(coords[v1] - coords[v0])
                eA.append(coords[a2] - coords[v0])
                eB.append(coords[b2] - coords[v0])
                ejac.append(2.0 * 4.0 * vols[ea] * vols[eb])
        self.edge_v4 = np.array(ev4, dtype=np.int64).reshape(-1, 4)
        self.edge_E = np.array(eE).reshape(-1, 2)
        self.edge_A = np.array(eA).reshape(-1, 2)
        self.edge_B = np.array(eB).reshape(-1, 2)
        self.edge_jac = np.array(ejac)
        vv5, vA1, vA2, vB1, vB2, vjac = [], [], [], [], [], []
        indptr, indices = mesh.vertex_elements()
        for v in range(mesh.n_vertices):
            inc = indices[indptr[v]:indptr[v + 1]]
            for ii in range(len(inc)):
                for jj in range(ii + 1, len(inc)):
                    e1, e2 = int(inc[ii]), int(inc[jj])
                    if len(np.intersect1d(elems[e1], elems[e2])) != 1:
                        continue
                    a = elems[e1][elems[e1] != v]
                    b = elems[e2][elems[e2] != v]
                    vv5.append((v, a[0], a[1], b[0], b[1]))
                    vA1.append(coords[a[0]] - coords[v])
                    vA2.append(coords[a[1]] - coords[v])
                    vB1.append(coords[b[0]] - coords[v])
                    vB2.append(coords[b[1]] - coords[v])
                    vjac.append(2.0 * 4.0 * vols[e1] * vols[e2])
        self.vx_v5 = np.array(vv5, dtype=np.int64).reshape(-1, 5)
        self.vx_A1 = np.array(vA1).reshape(-1, 2)
        self.vx_A2 = np.array(vA2).reshape(-1, 2)
        self.vx_B1 = np.array(vB1).reshape(-1, 2)
        self.vx_B2 = np.array(vB2).reshape(-1, 2)
        self.vx_jac = np.array(vjac)

    # -- evaluation -----------------------------------------------------

    def _check(self, u):
        if u.mesh is not self.mesh:
            raise ValueError("function lives on a different mesh")

    def _eps_abs(self, uvert):
        """Regularization floor on the difference quotient scale, from the
        current element gradients (p < 2 only)."""
        if self.spec.p >= 2.0:
            return 0.0
        s = self.spec.s
        if self.mesh.d == 1:
            h = self.xr - self.xl
            g = np.abs(uvert[self.vr] - uvert[self.vl]) / h
            rho = g * h ** (1.0 - s)
        else:
            gu = np.einsum("eld,el->ed", self.grads, uvert[self.mesh.elems])
            rho = np.linalg.norm(gu, axis=1) * self.hd ** (1.0 - s)
        est = float(rho.max()) if rho.size else 0.0
        if est == 0.0:
            return self.eps_reg
        return self.eps_reg * est

    def assemble(self, u, want_r=True, want_j=True):
        """Kernel part only: returns (E_G, R_G over dofs or None, J over
        dofs or None). The forcing enters energy/residual, not here."""
        self._check(u)
        mesh, spec = self.mesh, self.spec
        uvert = u.vertex_values()
        nv = mesh.n_vertices
        Rv = np.zeros(nv)
        Jv = np.zeros((nv, nv)) if want_j else np.zeros((1, 1))
        epsabs = self._eps_abs(uvert)
        delta = spec.delta if spec.delta is not None else 0.0
        args = (spec.s, spec.p, spec.family_code(), delta, spec.constant,
                epsabs, self.quad.far_field_factor, self.band_skip,
                bool(want_r), bool(want_j), Rv, Jv)
        kw = {}
        if spec.family == "custom":
            kw["psi"] = lambda r: spec.psi(r / spec.delta)
        if mesh.d == 1:
            ue_f = np.ascontiguousarray(
                (1.0 - self.g_f)[None, :] * uvert[self.vl][:, None]
                + self.g_f[None, :] * uvert[self.vr][:, None]
            )
            ue_n = np.ascontiguousarray(
                (1.0 - self.g_n)[None, :] * uvert[self.vl][:, None]
                + self.g_n[None, :] * uvert[self.vr][:, None]
            )
            E = self.backend.disjoint_sweep_1d(
                self.xl, self.xr, self.vl, self.vr, uvert, ue_f, ue_n,
                self.g_f, self.w_f, self.g_n, self.w_n, *args, **kw)
            E += self._identical_1d(uvert, epsabs, want_r, want_j, Rv, Jv)
            E += self._touching_1d(uvert, epsabs, want_r, want_j, Rv, Jv)
        else:
            u_loc = uvert[mesh.elems]
            ue_f = np.ascontiguousarray(u_loc @ self.phi_f.T)
            ue_n = np.ascontiguousarray(u_loc @ self.phi_n.T)
            E = self.backend.disjoint_sweep_2d(
                self.verts, uvert, self.nodes_f, self.wq_f, self.phi_f, ue_f,
                self.nodes_n, self.wq_n, self.phi_n, ue_n,
                self.bary, self.rad, self.hd, *args, **kw)
            E += self._identical_2d(uvert, epsabs, want_r, want_j, Rv, Jv)
            E += self._edge_2d(uvert, epsabs, want_r, want_j, Rv, Jv)
            E += self._vertex_2d(uvert, epsabs, want_r, want_j, Rv, Jv)
        E += self._tail_part(uvert, epsabs, want_r, want_j, Rv, Jv)
        idx = mesh.interior
        Rout = Rv[idx] if want_r else None
        Jout = Jv[np.ix_(idx, idx)] if want_j else None
        return E, Rout, Jout

    # singular-class sweeps, shared by both backends ----------------------

    def _kernel_weight(self, r):
        """psi(r/delta) * r^(-d - s p), vectorized."""
        spec = self.spec
        out = r ** (-(spec.d + spec.s * spec.p))
        fam = spec.family
        if fam == "truncated":
            return np.where(r <= spec.delta, out, 0.0)
        if fam == "tempered":
            return out * np.exp(-r / spec.delta)
        if fam == "custom":
            return out * spec.psi(r / spec.delta)
        return out

    def _du_terms(self, du, epsabs, rs, want_j):
        """Shared |du| powers: (t, tj) with t = |du|^(p-2) (0-safe) and tj
        its floored Jacobian variant."""
        p = self.spec.p
        pm2 = p - 2.0
        adu = np.abs(du)
        if pm2 == 0.0:
            t = np.ones_like(adu)
            return t, t
        if pm2 > 0.0:
            t = adu ** pm2
            return t, t
        safe = np.where(adu == 0.0, 1.0, adu)
        t = np.where(adu == 0.0, 0.0, safe ** pm2)
        if not want_j:
            return t, None
        tj = np.maximum(adu, epsabs * rs) ** pm2
        return t, tj

    def _identical_1d(self, uvert, epsabs, want_r, want_j, Rv, Jv):
        spec = self.spec
        c = spec.constant
        tab = self.tab1d
        th = tab["id_t"]
        h = self.xr - self.xl
        # exact horizon cut: the radial variable t = |x-y|/h runs over
        # (0, min(1, delta/h)), and rescaling the graded nodes onto that
        # range keeps the cutoff out of the rule's interior
        if spec.family == "truncated":
            tstar = np.minimum(1.0, spec.delta / h)[:, None]
        else:
            tstar = np.ones((h.size, 1))
        te = tstar * th[None, :]
        r = h[:, None] * te
        w = 2.0 * (h ** 2)[:, None] * (1.0 - te) * (tstar * tab["id_w"][None, :])
        kap = self._kernel_weight(r)
        du = (uvert[self.vl] - uvert[self.vr])[:, None] * te
        t, tj = self._du_terms(du, epsabs, r ** spec.s, want_j)
        common = w * kap
        E = (0.5 * c / spec.p) * float(np.sum(common * t * du * du))
        if want_r:
            coef = (0.5 * c) * common * t * du
            q = (coef * te).sum(axis=1)
            np.add.at(Rv, self.vl, q)
            np.add.at(Rv, self.vr, -q)
        if want_j:
            coef = (0.5 * c * (spec.p - 1.0)) * common * tj
            q = (coef * te ** 2).sum(axis=1)
            np.add.at(Jv, (self.vl, self.vl), q)
            np.add.at(Jv, (self.vr, self.vr), q)
            np.add.at(Jv, (self.vl, self.vr), -q)
            np.add.at(Jv, (self.vr, self.vl), -q)
        return E

    def _touching_1d(self, uvert, epsabs, want_r, want_j, Rv, Jv):
        spec = self.spec
        c = spec.constant
        tab = self.tab1d
        hA = (self.xr - self.xl)[:-1]
        hB = (self.xr - self.xl)[1:]
        uL = uvert[self.vl[:-1]]
        uV = uvert[self.vr[:-1]]
        uR = uvert[self.vr[1:]]
        wrad = tab["tc_w"][:, None]
        zg = tab["tc_z"]
        zwg = tab["tc_wz"]
        E = 0.0
        for region in (0, 1):
            # exact horizon cut: r = w * base(z), so per z-node the w range
            # is (0, min(1, delta/base)); rescaling the graded w nodes onto
            # it picks up the squared scale from the w dw measure.  The cut
            # kicks in where base(z) = delta, so the z panel is split there.
            htip = hA if region == 0 else hB
            hfar = hB if region == 0 else hA
            if spec.family == "truncated":
                zs = np.clip((spec.delta - htip) / hfar, 0.0, 1.0)[:, None]
                z = np.concatenate([zs * zg, zs + (1.0 - zs) * zg], axis=1)[:, None, :]
                zw = np.concatenate([zs * zwg, (1.0 - zs) * zwg], axis=1)[:, None, :]
            else:
                z = zg[None, None, :]
                zw = zwg[None, None, :]
            if region == 0:
                base = hA[:, None, None] + hB[:, None, None] * z
            else:
                base = hA[:, None, None] * z + hB[:, None, None]
            wgt0 = (hA * hB)[:, None, None] * tab["tc_c"][:, None] * zw
            if spec.family == "truncated":
                wstar = np.minimum(1.0, spec.delta / base)
            else:
                wstar = np.ones_like(base)
            weff = wstar * wrad
            r = weff * base
            if region == 0:
                dL = weff
                dV = weff * (z - 1.0)
                dR = -weff * z
            else:
                dL = weff * z
                dV = weff * (1.0 - z)
                dR = -weff
            du = (uL[:, None, None] * dL + uV[:, None, None] * dV
                  + uR[:, None, None] * dR)
            kap = self._kernel_weight(r)
            t, tj = self._du_terms(du, epsabs, r ** spec.s, want_j)
            common = wgt0 * wstar ** 2 * kap
            E += (c / spec.p) * float(np.sum(common * t * du * du))
            if want_r:
                coef = c * common * t * du
                for dphi, vids in ((dL, self.vl[:-1]), (dV, self.vr[:-1]), (dR, self.vr[1:])):
                    np.add.at(Rv, vids, np.einsum("njk,njk->n", coef, dphi))
            if want_j:
                coef = c * (spec.p - 1.0) * common * tj
                trip = ((dL, self.vl[:-1]), (dV, self.vr[:-1]), (dR, self.vr[1:]))
                for d1, v1 in trip:
                    for d2, v2 in trip:
                        np.add.at(Jv, (v1, v2), np.einsum("njk,njk,njk->n", coef, d1, d2))
        return E

    def _identical_2d(self, uvert, epsabs, want_r, want_j, Rv, Jv):
        spec = self.spec
        c = spec.constant
        E = 0.0
        ne = self.mesh.n_elements
        for lo in range(0, ne, _CHUNK_ELEMS):
            sl = slice(lo, min(lo + _CHUNK_ELEMS, ne))
            el = self.mesh.elems[sl]
            z = np.einsum("eij,qj->eqi", self.Mcols[sl], self.id_zhat)
            r = np.linalg.norm(z, axis=2)
            kap = self._kernel_weight(r)
            gu = np.einsum("eld,el->ed", self.grads[sl], uvert[el])
            du = np.einsum("ei,eqi->eq", gu, z)
            w = self.detsq[sl][:, None] * self.id_w[None, :]
            t, tj = self._du_terms(du, epsabs, r ** spec.s, want_j)
            common = w * kap
            E += (0.5 * c / spec.p) * float(np.sum(common * t * du * du))
            if want_r or want_j:
                dphi = np.einsum("eld,eqd->elq", self.grads[sl], z)
            if want_r:
                coef = (0.5 * c) * common * t * du
                np.add.at(Rv, el, np.einsum("eq,elq->el", coef, dphi))
            if want_j:
                coef = (0.5 * c * (spec.p - 1.0)) * common * tj
                blk = np.einsum("eq,elq,emq->elm", coef, dphi, dphi)
                np.add.at(Jv, (el[:, :, None], el[:, None, :]), blk)
        return E

    def _edge_2d(self, uvert, epsabs, want_r, want_j, Rv, Jv):
        spec = self.spec
        c = spec.constant
        dphi = self.edge_dphi
        rtab = self.edge_rtab
        wtab = self.edge_wtab
        uh, al, be = dphi[:, 1], dphi[:, 2], -dphi[:, 3]
        E = 0.0
        npair = self.edge_v4.shape[0]
        for lo in range(0, npair, _CHUNK_PAIRS):
            sl = slice(lo, min(lo + _CHUNK_PAIRS, npair))
            v4 = self.edge_v4[sl]
            zdir = (uh[None, :, None] * self.edge_E[sl][:, None, :]
                    + al[None, :, None] * self.edge_A[sl][:, None, :]
                    - be[None, :, None] * self.edge_B[sl][:, None, :])
            zn = np.linalg.norm(zdir, axis=2)
            r = zn[:, :, None] * rtab[None, :, :]
            kap = self._kernel_weight(r)
            s4 = uvert[v4] @ dphi.T
            du = s4[:, :, None] * rtab[None, :, :]
            w = self.edge_jac[sl][:, None, None] * wtab[None, :, :]
            t, tj = self._du_terms(du, epsabs, r ** spec.s, want_j)
            common = w * kap
            E += (0.5 * c / spec.p) * float(np.sum(common * t * du * du))
            if want_r:
                coef = np.einsum("mqj,qj->mq", (0.5 * c) * common * t * du, rtab)
                np.add.at(Rv, v4, coef @ dphi)
            if want_j:
                coef = np.einsum(
                    "mqj,qj->mq", (0.5 * c * (spec.p - 1.0)) * common * tj, rtab ** 2
                )
                blk = np.einsum("mq,qk,ql->mkl", coef, dphi, dphi)
                np.add.at(Jv, (v4[:, :, None], v4[:, None, :]), blk)
        return E

    def _vertex_2d(self, uvert, epsabs, want_r, want_j, Rv, Jv):
        spec = self.spec
        c = spec.constant
        rho = self.vx_rho
        wa, wb, tt = self.vx_wa, self.vx_wb, self.vx_t
        E = 0.0
        npair = self.vx_v5.shape[0]
        for lo in range(0, npair, _CHUNK_PAIRS):
            sl = slice(lo, min(lo + _CHUNK_PAIRS, npair))
            v5 = self.vx_v5[sl]
            PA = ((1.0 - wa)[None, :, None] * self.vx_A1[sl][:, None, :]
                  + wa[None, :, None] * self.vx_A2[sl][:, None, :])
            PB = ((1.0 - wb)[None, :, None] * self.vx_B1[sl][:, None, :]
                  + wb[None, :, None] * self.vx_B2[sl][:, None, :])
            w = self.vx_jac[sl][:, None, None] * self.vx_wtab[None, :, :]
            for region in (0, 1):
                if region == 0:
                    zdir = PA - tt[None, :, None] * PB
                else:
                    zdir = tt[None, :, None] * PA - PB
                dphi = self.vx_dphi[region]
                zn = np.linalg.norm(zdir, axis=2)
                r = zn[:, :, None] * rho[None, None, :]
                kap = self._kernel_weight(r)
                s5 = uvert[v5] @ dphi.T
                du = s5[:, :, None] * rho[None, None, :]
                t, tj = self._du_terms(du, epsabs, r ** spec.s, want_j)
                common = w * kap
                E += (0.5 * c / spec.p) * float(np.sum(common * t * du * du))
                if want_r:
                    coef = ((0.5 * c) * common * t * du) @ rho
                    np.add.at(Rv, v5, coef @ dphi)
                if want_j:
                    coef = ((0.5 * c * (spec.p - 1.0)) * common * tj) @ (rho ** 2)
                    blk = np.einsum("mq,qk,ql->mkl", coef, dphi, dphi)
                    np.add.at(Jv, (v5[:, :, None], v5[:, None, :]), blk)
        return E

    def _tail_part(self, uvert, epsabs, want_r, want_j, Rv, Jv):
        spec = self.spec
        c = spec.constant
        tr = self.tail
        ue = np.einsum("nk,nk->n", tr.basis, uvert[tr.verts])
        wt = tr.wq * tr.tail
        p = spec.p
        pm2 = p - 2.0
        aue = np.abs(ue)
        if pm2 == 0.0:
            t = np.ones_like(aue)
            tj = t
        elif pm2 > 0.0:
            t = aue ** pm2
            tj = t
        else:
            safe = np.where(aue == 0.0, 1.0, aue)
            t = np.where(aue == 0.0, 0.0, safe ** pm2)
            tj = np.maximum(aue, epsabs) ** pm2
        E = (c / p) * float(np.sum(wt * t * ue * ue))
        if want_r:
            coef = c * wt * t * ue
            np.add.at(Rv, tr.verts, coef[:, None] * tr.basis)
        if want_j:
            coef = c * (p - 1.0) * wt * tj
            blk = coef[:, None, None] * tr.basis[:, :, None] * tr.basis[:, None, :]
            np.add.at(Jv, (tr.verts[:, :, None], tr.verts[:, None, :]), blk)
        return E

    # -- public operations ------------------------------------------------

    def load(self, f):
        key = id(f)
        hit = self._load_cache.get(key)
        if hit is not None and hit[0] is f:
            return hit[1]
        b = load_vector(self.mesh, f)
        self._load_cache[key] = (f, b)
        return b

    def energy(self, u, f=None):
        E, _, _ = self.assemble(u, want_r=False, want_j=False)
        if f is not None:
            E -= float(self.load(f) @ u.dof_values)
        return E

    def residual(self, u, f=None):
        _, R, _ = self.assemble(u, want_r=True, want_j=False)
        if f is not None:
            R = R - self.load(f)
        return R

    def jacobian(self, u):
        _, _, J = self.assemble(u, want_r=False, want_j=True)
        return J


def energy(ctx, u, f=None):
    """Discrete energy F(u) = E_G(u) - <f, u> (G part only when f is None)."""
    return ctx.energy(u, f)


def residual(ctx, u, f=None):
    """Gradient of the discrete energy over interior vertices."""
    return ctx.residual(u, f)


def jacobian(ctx, u):
    """Second derivative of the discrete energy; symmetric."""
    return ctx.jacobian(u)


def _gauss_cached(k):
    from .quadrature import gauss01

    return gauss01(k)


def _contig3(triple):
    nodes, w, basis = triple
    return (np.ascontiguousarray(nodes), np.ascontiguousarray(w),
            np.ascontiguousarray(basis))


# -- text dumps ----------------------------------------------------------


def dump_matrix(path, M):
    """Coordinate text format: header 'n m nnz', rows 'i j value'; exact
    zeros are skipped."""
    M = np.asarray(M)
    ii, jj = np.nonzero(M)
    with open(path, "w") as fh:
        fh.write("%d %d %d\n" % (M.shape[0], M.shape[1], len(ii)))
        for i, j in zip(ii, jj):
            fh.write("%d %d %.17g\n" % (i, j, M[i, j]))


def dump_solution(path, u):
    """Vertex-indexed values: header 'n', rows 'vertex_index value'."""
    uv = u.vertex_values()
    with open(path, "w") as fh:
        fh.write("%d\n" % uv.size)
        for i, v in enumerate(uv):
            fh.write("%d %.17g\n" % (i, v))


def load_solution(path, mesh):
    with open(path) as fh:
        n = int(fh.readline())
        uv = np.zeros(n)
        for _ in range(n):
            i, v = fh.readline().split()
            uv[int(i)] = float(v)
    if n != mesh.n_vertices:
        raise ValueError("solution has %d vertices, mesh has %d" % (n, mesh.n_vertices))
    return DiscreteFunction.from_vertex_values(mesh, uv)
