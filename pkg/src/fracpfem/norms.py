"""Fractional seminorms, energy norms, and difference-quotient diagnostics.

wsp_norm is the Gagliardo seminorm of the zero extension, computed with the
same pair and tail rules as the assembly. besov_seminorm measures interior
smoothness through second differences on dyadic lags; for sigma below the
true regularity the quotients stay bounded as the lag shrinks, above it
they blow up. error_proxy is the seminorm distance between a solution and
the solution on the uniformly refined mesh.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .assembly import AssemblyContext, DiscreteFunction
from .kernel import KernelSpec
from .quadrature import QuadConfig


@dataclass
class NormReport:
    """Scalar norm value plus the parameters that produced it."""

    value: float
    family: str
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


@dataclass
class RateTable:
    """Mesh sizes, errors, per-step dyadic rates, and the fitted slope."""

    h: np.ndarray
    errors: np.ndarray
    step_rates: np.ndarray
    slope: float

    def __str__(self):
        lines = ["      h        error      rate"]
        rates = [""] + ["%.3f" % r for r in self.step_rates]
        for hv, ev, rv in zip(self.h, self.errors, rates):
            lines.append("%10.6g  %.6g  %s" % (hv, ev, rv))
        lines.append("fitted slope: %.4f" % self.slope)
        return "\n".join(lines)


def _pure_context(mesh, s, p, quad=None):
    """Cached normalized pure-fractional context on this mesh.

    The cache keys on (s, p) and the quadrature configuration, so repeated
    norm evaluations on one mesh reuse the pair tables.
    """
    cache = getattr(mesh, "_norm_ctx_cache", None)
    if cache is None:
        cache = {}
        mesh._norm_ctx_cache = cache
    if quad is None:
        quad = QuadConfig()
    key = (float(s), float(p)) + dataclasses.astuple(quad)
    if key not in cache:
        spec = KernelSpec(d=mesh.d, s=s, p=p, family="pure_fractional",
                          normalized=True)
        cache[key] = AssemblyContext(mesh, spec, quad=quad)
    return cache[key]


def wsp_norm(ctx, u, s=None, p=None):
    """Discrete W^s_p seminorm of the zero extension of u.

    (C_{d,s,p}/2 * double integral of |u(x)-u(y)|^p / |x-y|^(d+sp))^(1/p),
    evaluated with the assembly pair and tail rules. s and p default to
    the context's kernel parameters.
    """
    if u.mesh is not ctx.mesh:
        raise ValueError("u does not live on the context mesh")
    s = ctx.spec.s if s is None else float(s)
    p = ctx.spec.p if p is None else float(p)
    pc = _pure_context(ctx.mesh, s, p, ctx.quad)
    return (p * pc.energy(u)) ** (1.0 / p)


def energy_norm(ctx, u):
    """Energy seminorm ((1/2) int int psi |du|^p r^(-d-sp))^(1/p) of u."""
    if u.mesh is not ctx.mesh:
        raise ValueError("u does not live on the context mesh")
    p = ctx.spec.p
    return (p * ctx.energy(u) / ctx.spec.constant) ** (1.0 / p)


# -- second-difference Besov quotients ---------------------------------


def _default_directions(d, n2d=16):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    ang = np.arange(n2d) * (2.0 * np.pi / n2d)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _default_lags(mesh):
    diam = np.ptp(mesh.coords, axis=0)
    diam = float(np.sqrt(np.sum(diam ** 2)))
    lags = diam * 2.0 ** (-np.arange(2.0, 10.0))
    hmin = float(mesh.element_sizes().min())
    lags = lags[lags >= 2.0 * hmin]
    return lags


def _boundary_distance(mesh, pts):
    """Distance from each point to the mesh boundary facets."""
    if mesh.d == 1:
        a = mesh.coords[:, 0].min()
        b = mesh.coords[:, 0].max()
        x = pts[:, 0]
        return np.minimum(x - a, b - x)
    fac = mesh.boundary_facets()
    a = mesh.coords[fac[:, 0]]
    t = mesh.coords[fac[:, 1]] - a
    tt = np.sum(t ** 2, axis=1)
    best = np.full(pts.shape[0], np.inf)
    for lo in range(0, pts.shape[0], 4096):
        sl = slice(lo, min(lo + 4096, pts.shape[0]))
        w = pts[sl, None, :] - a[None, :, :]
        lam = np.clip(np.einsum("pfd,fd->pf", w, t) / tt[None, :], 0.0, 1.0)
        dd = w - lam[:, :, None] * t[None, :, :]
        best[sl] = np.sqrt(np.min(np.sum(dd ** 2, axis=2), axis=1))
    return best


def _sample_grid(mesh, spacing):
    """Cell-centered sampling grid over the mesh hull with cell measures."""
    lo = mesh.coords.min(axis=0)
    hi = mesh.coords.max(axis=0)
    if mesh.d == 1:
        n = max(8, int(np.ceil((hi[0] - lo[0]) / spacing)))
        dx = (hi[0] - lo[0]) / n
        x = lo[0] + dx * (np.arange(n) + 0.5)
        return x[:, None], dx
    n = np.maximum(8, np.ceil((hi - lo) / spacing).astype(int))
    dx = (hi - lo) / n
    gx = lo[0] + dx[0] * (np.arange(n[0]) + 0.5)
    gy = lo[1] + dx[1] * (np.arange(n[1]) + 0.5)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    return pts, float(dx[0] * dx[1])


def _besov_evaluator(u, mesh):
    if isinstance(u, DiscreteFunction):
        if mesh is None:
            mesh = u.mesh
        uvert = u.vertex_values()

        def ev(pts):
            return u.mesh.eval_p1(uvert, pts)

        return ev, mesh
    if not callable(u):
        raise TypeError("u must be a DiscreteFunction or a callable field")
    if mesh is None:
        raise ValueError("a mesh is required when u is a callable")

    def ev(pts):
        if mesh.d == 1:
            return np.asarray(u(pts[:, 0]), dtype=float)
        return np.asarray(u(pts), dtype=float)

    return ev, mesh


def besov_quotients(u, sigma, p, mesh=None, directions=None, lags=None,
                    grid_spacing=None):
    """Second-difference quotients per dyadic lag.

    Returns (lags, quotients) with quotient[i] = max over directions of
    ||u(x+h) - 2u(x) + u(x-h)||_{L^p(Omega_i)} / |h|^sigma, where Omega_i
    keeps the points deeper than |h_i|, so all evaluation points stay
    inside the domain.
    """
    if not 0.0 < sigma < 2.0:
        raise ValueError("sigma must lie in (0, 2)")
    ev, mesh = _besov_evaluator(u, mesh)
    if directions is None:
        directions = _default_directions(mesh.d)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if lags is None:
        lags = _default_lags(mesh)
    lags = np.asarray(lags, dtype=float)
    if lags.size == 0:
        raise ValueError("empty lag set")
    if grid_spacing is None:
        grid_spacing = lags.min() / (16.0 if mesh.d == 1 else 3.0)
    pts, cellw = _sample_grid(mesh, grid_spacing)
    depth = _boundary_distance(mesh, pts)
    quots = np.zeros(lags.size)
    for i, lag in enumerate(lags):
        keep = depth > lag * (1.0 + 1e-9)
        if not keep.any():
            quots[i] = np.nan
            continue
        x = pts[keep]
        u0 = ev(x)
        best = 0.0
        for dvec in directions:
            up = ev(x + lag * dvec)
            um = ev(x - lag * dvec)
            d2 = up - 2.0 * u0 + um
            val = (cellw * np.sum(np.abs(d2) ** p)) ** (1.0 / p)
            best = max(best, val / lag ** sigma)
        quots[i] = best
    return lags, quots


def besov_seminorm(u, sigma, p, mesh=None, directions=None, lags=None,
                   grid_spacing=None):
    """Max second-difference quotient over the sampled dyadic lags."""
    lags, quots = besov_quotients(u, sigma, p, mesh=mesh,
                                  directions=directions, lags=lags,
                                  grid_spacing=grid_spacing)
    good = np.isfinite(quots)
    if not good.any():
        raise ValueError("no lag fits inside the domain")
    return float(np.max(quots[good]))


# -- refinement proxies and rate fits -----------------------------------


def _check_nested(coarse, fine):
    if coarse.d != fine.d:
        raise ValueError("meshes have different dimension")
    if fine.n_elements < 2 * coarse.n_elements:
        raise ValueError("second mesh is not a refinement of the first")
    # every coarse vertex must reappear in the fine mesh
    scale = max(1.0, float(np.max(np.abs(fine.coords))))
    keys = {tuple(np.round(c / scale, 12)) for c in fine.coords}
    for c in coarse.coords:
        if tuple(np.round(c / scale, 12)) not in keys:
            raise ValueError("meshes are not nested")


def error_proxy(u_h, u_h2, s, p, quad=None):
    """Seminorm distance between u_h and the refined solution u_h2.

    u_h is prolonged to the fine mesh by exact nested-P1 injection
    (evaluation at the fine vertices), the difference lives on the fine
    mesh, and its W^s_p seminorm is returned.
    """
    coarse, fine = u_h.mesh, u_h2.mesh
    _check_nested(coarse, fine)
    uc = coarse.eval_p1(u_h.vertex_values(), fine.coords)
    diff = uc - u_h2.vertex_values()
    dfun = DiscreteFunction.from_vertex_values(fine, diff)
    pc = _pure_context(fine, s, p, quad)
    return (p * pc.energy(dfun)) ** (1.0 / p)


def fit_rates(h_values, errors):
    """Per-step dyadic rates log2(e_i/e_{i+1}) and the fitted log-log slope."""
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size != e.size or h.size < 2:
        raise ValueError("need at least two (h, error) pairs")
    if np.any(e <= 0.0) or np.any(h <= 0.0):
        raise ValueError("h values and errors must be positive")
    steps = np.log2(e[:-1] / e[1:]) / np.log2(h[:-1] / h[1:])
    slope = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    return RateTable(h=h, errors=e, step_rates=steps, slope=slope)
