"""Meshes: graded 1d partitions and conforming 2d triangulations.

Conventions. Vertices carry the Dirichlet structure: boundary vertices are
flagged and excluded from the degree-of-freedom map (homogeneous volume
constraint; discrete functions extend by zero). Boundary detection is
topological (facets incident to a single element), so loaded meshes need no
domain description.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

L_SHAPE_POLYGON = np.array(
    [(-0.5, -0.5), (0.0, -0.5), (0.0, 0.0), (0.5, 0.0), (0.5, 0.5), (-0.5, 0.5)]
)
SQUARE_POLYGON = np.array([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])


@dataclass(frozen=True)
class DomainSpec:
    """Computational domain: an interval (a, b) or one of two fixed
    polygons, the unit square centered at the origin and the L-shape
    obtained from it by removing the quadrant [0, 1/2] x [-1/2, 0]."""

    kind: str
    a: float = -1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("interval", "square", "l_shape"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "interval" and not self.b > self.a:
            raise ValueError("interval needs b > a")

    @property
    def dim(self):
        return 1 if self.kind == "interval" else 2

    def polygon(self):
        if self.kind == "square":
            return SQUARE_POLYGON.copy()
        if self.kind == "l_shape":
            return L_SHAPE_POLYGON.copy()
        raise ValueError("interval domains have no polygon")

    def measure(self):
        if self.kind == "interval":
            return self.b - self.a
        return 1.0 if self.kind == "square" else 0.75

    def diameter(self):
        if self.kind == "interval":
            return self.b - self.a
        return math.sqrt(2.0)


class Mesh:
    """Simplicial mesh with Dirichlet dof numbering.

    Attributes:
        d: dimension (1 or 2).
        coords: (nv, d) vertex coordinates.
        elems: (ne, d+1) vertex indices per element.
        boundary: (nv,) bool, True on boundary vertices.
        dof: (nv,) int, dof index of interior vertices, -1 on the boundary.
        ndof: number of interior vertices.
        mu: grading strength used to build the mesh (1 = quasi-uniform).
    """

    def __init__(self, d, coords, elems, mu=1.0):
        self.d = int(d)
        self.coords = np.ascontiguousarray(coords, dtype=float)
        self.elems = np.ascontiguousarray(elems, dtype=np.int64)
        self.mu = float(mu)
        if self.coords.ndim != 2 or self.coords.shape[1] != self.d:
            raise ValueError("coords must have shape (nv, d)")
        if self.elems.ndim != 2 or self.elems.shape[1] != self.d + 1:
            raise ValueError("elems must have shape (ne, d+1)")
        self.boundary = _topological_boundary(self.coords.shape[0], self.elems, self.d)
        self.dof = np.full(self.coords.shape[0], -1, dtype=np.int64)
        self.interior = np.flatnonzero(~self.boundary)
        self.dof[self.interior] = np.arange(self.interior.size)
        self.ndof = int(self.interior.size)
        self._vertex_elems = None
        self._kdtree = None
        self._star_constant = None
        self.norm_context_cache = {}

    # -- basic geometry ------------------------------------------------

    @property
    def n_vertices(self):
        return self.coords.shape[0]

    @property
    def n_elements(self):
        return self.elems.shape[0]

    def element_sizes(self):
        """Element diameters h_T (longest edge; length in 1d)."""
        if self.d == 1:
            return np.abs(self.coords[self.elems[:, 1], 0] - self.coords[self.elems[:, 0], 0])
        p = self.coords[self.elems]
        e01 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        e12 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
        e20 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
        return np.maximum(e01, np.maximum(e12, e20))

    def volumes(self):
        if self.d == 1:
            return self.element_sizes()
        p = self.coords[self.elems]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def h(self):
        return float(self.element_sizes().max())

    def barycenters(self):
        return self.coords[self.elems].mean(axis=1)

    def boundary_facets(self):
        """(nbf, d) vertex index array of facets lying on the boundary."""
        return _boundary_facets(self.elems, self.d)

    # -- shape regularity ----------------------------------------------

    def shape_regularity(self):
        """sigma = max_T h_T / rho_T with rho_T the inscribed-ball diameter.

        Equals 1 in 1d. For a triangle rho_T = 4 |T| / perimeter.
        """
        if self.d == 1:
            return 1.0
        p = self.coords[self.elems]
        e01 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        e12 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
        e20 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
        per = e01 + e12 + e20
        rho = 4.0 * self.volumes() / per
        hT = np.maximum(e01, np.maximum(e12, e20))
        return float((hT / rho).max())

    # -- adjacency and stars ---------------------------------------------

    def vertex_elements(self):
        """CSR (indptr, data): elements incident to each vertex."""
        if self._vertex_elems is None:
            ev = self.elems.ravel()
            order = np.argsort(ev, kind="stable")
            counts = np.bincount(ev, minlength=self.n_vertices)
            indptr = np.concatenate(([0], np.cumsum(counts)))
            data = (np.arange(self.elems.size) // (self.d + 1))[order]
            self._vertex_elems = (indptr.astype(np.int64), data.astype(np.int64))
        return self._vertex_elems

    def element_star(self, t, ring=1):
        """Indices of elements sharing at least one vertex with element t
        (the 1-ring); ring=2 grows the patch by one more layer."""
        if ring not in (1, 2):
            raise ValueError("ring must be 1 or 2")
        indptr, data = self.vertex_elements()
        members = _one_ring(self.elems, indptr, data, np.array([t], dtype=np.int64))
        if ring == 2:
            members = _one_ring(self.elems, indptr, data, members)
        return members

    def element_touches_boundary(self, t):
        return bool(self.boundary[self.elems[t]].any())

    def star_constant(self):
        """Smallest uniform C such that B(x_T, C h_T) covers the 1-ring of
        every boundary-touching element."""
        if self._star_constant is None:
            hT = self.element_sizes()
            bary = self.barycenters()
            c = 1.0
            for t in range(self.n_elements):
                if not self.element_touches_boundary(t):
                    continue
                ring = self.element_star(t, ring=1)
                verts = np.unique(self.elems[ring].ravel())
                r = np.linalg.norm(self.coords[verts] - bary[t], axis=1).max()
                c = max(c, r / hT[t])
            self._star_constant = float(c)
        return self._star_constant

    def extended_star(self, t):
        """Ball (center, radius) covering the 1-ring of a boundary-touching
        element, with radius C h_T for a single mesh-wide constant C."""
        if not self.element_touches_boundary(t):
            raise ValueError("extended star is defined for boundary-touching elements")
        hT = self.element_sizes()[t]
        center = self.coords[self.elems[t]].mean(axis=0)
        return center, self.star_constant() * hT

    # -- point location and P1 evaluation --------------------------------

    def locate(self, points):
        """Element index containing each query point (points inside the
        domain; on shared facets any incident element may be returned)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.d == 1:
            x = pts[:, 0]
            lefts = self.coords[self.elems[:, 0], 0]
            order = np.argsort(lefts)
            idx = np.clip(np.searchsorted(lefts[order], x, side="right") - 1, 0, self.n_elements - 1)
            return order[idx]
        return self._locate_2d(pts)

    def _locate_2d(self, pts):
        from scipy.spatial import cKDTree

        if self._kdtree is None:
            self._kdtree = cKDTree(self.barycenters())
        p = self.coords[self.elems]
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        todo = np.arange(pts.shape[0])
        k = 8
        while todo.size and k <= 4 * self.n_elements:
            kq = min(k, self.n_elements)
            _, near = self._kdtree.query(pts[todo], k=kq)
            near = near.reshape(todo.size, kq)
            m = todo.size
            q = np.repeat(pts[todo], kq, axis=0)
            lam = _barycentric(p[near.ravel()], q).reshape(m, kq, 3)
            ok = np.all(lam >= -1e-10, axis=2)
            hit = ok.any(axis=1)
            first = np.argmax(ok, axis=1)
            out[todo[hit]] = near[np.flatnonzero(hit), first[hit]]
            todo = todo[~hit]
            k *= 4
        if todo.size:
            raise ValueError(f"{todo.size} points could not be located in the mesh")
        return out

    def eval_p1(self, vertex_values, points):
        """Evaluate the P1 function with the given vertex values at points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.asarray(vertex_values, dtype=float)
        if self.d == 1:
            order = np.argsort(self.coords[:, 0])
            return np.interp(pts[:, 0], self.coords[order, 0], vals[order])
        els = self.locate(pts)
        p = self.coords[self.elems[els]]
        lam = _barycentric(p, pts)
        return np.einsum("ij,ij->i", lam, vals[self.elems[els]])

    # -- text serialization ----------------------------------------------

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(f"{self.d} {self.n_vertices} {self.n_elements}\n")
            for row in self.coords:
                fh.write(" ".join("%.17g" % v for v in row) + "\n")
            for row in self.elems:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d, nv, ne = (int(t) for t in fh.readline().split())
            coords = np.array(
                [[float(t) for t in fh.readline().split()] for _ in range(nv)]
            )
            elems = np.array(
                [[int(t) for t in fh.readline().split()] for _ in range(ne)],
                dtype=np.int64,
            )
        return cls(d, coords.reshape(nv, d), elems, mu=1.0)


# -- helpers -----------------------------------------------------------


def _topological_boundary(nv, elems, d):
    facets = _boundary_facets(elems, d)
    mask = np.zeros(nv, dtype=bool)
    if facets.size:
        mask[facets.ravel()] = True
    return mask


def _boundary_facets(elems, d):
    if d == 1:
        verts, counts = np.unique(elems.ravel(), return_counts=True)
        return verts[counts == 1][:, None]
    edges = np.concatenate([elems[:, [0, 1]], elems[:, [1, 2]], elems[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq[counts == 1]


def _one_ring(elems, indptr, data, members):
    verts = np.unique(elems[members].ravel())
    chunks = [data[indptr[v]:indptr[v + 1]] for v in verts]
    return np.unique(np.concatenate(chunks + [members]))


def _in_triangle(tri, pt, tol=1e-10):
    lam = _barycentric(tri[None, :, :], pt[None, :])[0]
    return bool(np.all(lam >= -tol))


def _barycentric(tris, pts):
    """Barycentric coordinates of pts[i] in tris[i] ((n,3,2) and (n,2))."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    v0 = b - a
    v1 = c - a
    v2 = pts - a
    den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / den
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / den
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


# -- 1d construction ---------------------------------------------------


def build_graded_mesh_1d(a, b, h, mu=1.0):
    """Partition of (a, b) graded toward both endpoints.

    Node positions follow x_j = b - (b-a)/2 (1 - j/M)^mu on the right half
    (mirrored on the left), with M chosen so the central elements have size
    about h. mu = 1 gives the uniform mesh; boundary elements scale like
    M^(-mu).
    """
    if not b > a:
        raise ValueError("need b > a")
    if h <= 0 or h >= (b - a):
        raise ValueError("need 0 < h < b - a")
    if mu < 1.0:
        raise ValueError("grading strength mu must be >= 1")
    M = max(1, round((b - a) / (2.0 * h)))
    t = (1.0 - np.arange(M + 1) / M) ** mu
    right = b - 0.5 * (b - a) * t
    left = a + 0.5 * (b - a) * t
    nodes = np.concatenate([left[:0:-1], right])
    coords = nodes[:, None]
    ids = np.arange(nodes.size - 1)
    elems = np.stack([ids, ids + 1], axis=1)
    return Mesh(1, coords, elems, mu=mu)


# -- 2d construction ---------------------------------------------------


def _structured_grid(domain, n):
    """Consistent-diagonal triangulation of the square or L-shape with n
    cells per unit side. All cells are split along the same diagonal
    direction, so refining n -> 2n produces nested meshes."""
    xs = np.linspace(-0.5, 0.5, n + 1)
    vid = -np.ones((n + 1, n + 1), dtype=np.int64)
    coords = []
    tris = []

    def vertex(i, j):
        if vid[i, j] < 0:
            vid[i, j] = len(coords)
            coords.append((xs[i], xs[j]))
        return vid[i, j]

    for i in range(n):
        for j in range(n):
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (xs[j] + xs[j + 1])
            if domain.kind == "l_shape" and cx > 0.0 and cy < 0.0:
                continue
            v00 = vertex(i, j)
            v10 = vertex(i + 1, j)
            v01 = vertex(i, j + 1)
            v11 = vertex(i + 1, j + 1)
            tris.append((v00, v10, v01))
            tris.append((v10, v11, v01))
    return np.array(coords), np.array(tris, dtype=np.int64)


def _point_segment_dist(pts, p0, p1):
    d = p1 - p0
    L2 = float(d @ d)
    t = np.clip(((pts - p0) @ d) / L2, 0.0, 1.0)
    proj = p0 + t[:, None] * d
    return np.linalg.norm(pts - proj, axis=1)


def _dist_to_boundary(mesh_coords, elems, pts):
    facets = _boundary_facets(elems, 2)
    out = np.full(pts.shape[0], np.inf)
    for f in facets:
        out = np.minimum(out, _point_segment_dist(pts, mesh_coords[f[0]], mesh_coords[f[1]]))
    return out


def _bisect_marked(coords, elems, marked):
    """Longest-edge bisection of the marked elements with conformity
    closure. Returns new (coords, elems)."""
    coords = [tuple(c) for c in coords]
    elems = [tuple(e) for e in elems]
    edge_mid = {}

    def longest_edge(e):
        best = None
        best_len = -1.0
        for k in range(3):
            v0, v1 = e[k], e[(k + 1) % 3]
            key = (min(v0, v1), max(v0, v1))
            dx = coords[v0][0] - coords[v1][0]
            dy = coords[v0][1] - coords[v1][1]
            L = dx * dx + dy * dy
            if L > best_len + 1e-15 * max(best_len, 1.0) or (
                abs(L - best_len) <= 1e-15 * max(best_len, 1.0) and key < best
            ):
                best_len = L
                best = key
        return best

    def edge_elems(edge):
        out = []
        for t, e in enumerate(elems):
            if e is None:
                continue
            if edge[0] in e and edge[1] in e:
                out.append(t)
        return out

    # map edge -> incident live elements, maintained incrementally
    incidence = {}

    def add_incidence(t):
        e = elems[t]
        for k in range(3):
            key = (min(e[k], e[(k + 1) % 3]), max(e[k], e[(k + 1) % 3]))
            incidence.setdefault(key, set()).add(t)

    def drop_incidence(t):
        e = elems[t]
        for k in range(3):
            key = (min(e[k], e[(k + 1) % 3]), max(e[k], e[(k + 1) % 3]))
            incidence.get(key, set()).discard(t)

    for t in range(len(elems)):
        add_incidence(t)

    def split(t):
        """Bisect element t across its longest edge, recursing on the
        neighbor until it is compatibly divisible."""
        stack = [t]
        while stack:
            cur = stack[-1]
            if elems[cur] is None:
                stack.pop()
                continue
            edge = longest_edge(elems[cur])
            nbrs = [o for o in incidence.get(edge, ()) if o != cur and elems[o] is not None]
            nbr = nbrs[0] if nbrs else None
            if nbr is not None and longest_edge(elems[nbr]) != edge:
                stack.append(nbr)
                continue
            stack.pop()
            if edge not in edge_mid:
                mx = 0.5 * (coords[edge[0]][0] + coords[edge[1]][0])
                my = 0.5 * (coords[edge[0]][1] + coords[edge[1]][1])
                edge_mid[edge] = len(coords)
                coords.append((mx, my))
            mid = edge_mid[edge]
            for u in ([cur] if nbr is None else [cur, nbr]):
                e = elems[u]
                drop_incidence(u)
                elems[u] = None
                apex = next(v for v in e if v not in edge)
                for end in edge:
                    elems.append((apex, end, mid) if _ccw(coords, apex, end, mid) else (apex, mid, end))
                    add_incidence(len(elems) - 1)

    for t in sorted(marked):
        if elems[t] is not None:
            split(t)

    live = [e for e in elems if e is not None]
    return np.array(coords), np.array(live, dtype=np.int64)


def _ccw(coords, a, b, c):
    ax, ay = coords[a]
    bx, by = coords[b]
    cx, cy = coords[c]
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) > 0.0


def build_mesh_2d(domain, h, mu=1.0):
    """Triangulation of the square or L-shape with target size h.

    mu = 1 returns the structured consistent-diagonal mesh. mu > 1 refines
    it by longest-edge bisection until h_T <= max(h^mu,
    h dist(T, boundary)^((mu-1)/mu)) for every element.
    """
    if domain.dim != 2:
        raise ValueError("build_mesh_2d needs a 2d domain")
    if h <= 0 or h >= 1.0:
        raise ValueError("need 0 < h < 1")
    if mu < 1.0:
        raise ValueError("grading strength mu must be >= 1")
    n = max(2, round(1.0 / h))
    if domain.kind == "l_shape" and n % 2:
        n += 1
    coords, elems = _structured_grid(domain, n)
    if mu > 1.0:
        for _ in range(64):
            p = coords[elems]
            e01 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
            e12 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
            e20 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
            hT = np.maximum(e01, np.maximum(e12, e20))
            dT = np.minimum.reduce(
                [_dist_to_boundary(coords, elems, coords[elems[:, k]]) for k in range(3)]
            )
            target = np.maximum(h ** mu, h * dT ** ((mu - 1.0) / mu))
            marked = np.flatnonzero(hT > target * (1.0 + 1e-12))
            if marked.size == 0:
                break
            coords, elems = _bisect_marked(coords, elems, marked)
        else:
            raise RuntimeError("graded refinement did not terminate")
    return Mesh(2, coords, elems, mu=mu)


def build_mesh(domain, h, mu=1.0):
    """Build a mesh for the domain at target size h and grading mu."""
    if domain.dim == 1:
        return build_graded_mesh_1d(domain.a, domain.b, h, mu)
    return build_mesh_2d(domain, h, mu)
