"""End-to-end studies: boundary-exponent fits, rate tables, profile dumps.

A study sweeps (s, p) cells over one domain and kernel family. Cells run
sequentially and are isolated: a failure in one cell is recorded in its
result and the sweep continues. Output CSVs are deterministic, so a rerun
with the same config reproduces them byte for byte; timings live only in
the run manifest.
"""

import dataclasses
import hashlib
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .assembly import AssemblyContext, DiscreteFunction
from .kernel import KernelSpec
from .mesh import DomainSpec, build_mesh
from .norms import RateTable, error_proxy, fit_rates
from .quadrature import QuadConfig
from .solver import SolverControls, solve

_KINDS = ("boundary_exponent", "convergence_rate", "profile_dump")
_FORCINGS = ("constant", "horizon_layer")


@dataclass
class ExperimentConfig:
    """One study: a sweep over (s, p) cells on a fixed domain and family.

    forcing "constant" uses forcing_value; "horizon_layer" uses the
    s-dependent constant delta^(2-2s)/(1-s), the load whose solution
    develops the boundary layer profile of the finite-horizon operator.
    h_values is the mesh-size list (a single entry except for rate
    studies, which need a strictly halving sequence).
    """

    kind: str
    domain: DomainSpec
    s_values: tuple
    p_values: tuple
    h_values: tuple
    family: str = "pure_fractional"
    delta: float = None
    normalized: bool = True
    mu: float = 1.0
    forcing: str = "constant"
    forcing_value: float = 1.0
    outdir: str = None
    window: tuple = None
    fit_samples_2d: int = 12
    quad: QuadConfig = None
    controls: SolverControls = None
    eps_reg: float = 1e-10
    backend: str = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.forcing not in _FORCINGS:
            raise ValueError(f"unknown forcing {self.forcing!r}")
        self.s_values = tuple(float(s) for s in self.s_values)
        self.p_values = tuple(float(p) for p in self.p_values)
        self.h_values = tuple(float(h) for h in self.h_values)
        if not self.s_values or not self.p_values or not self.h_values:
            raise ValueError("sweep lists must be non-empty")
        if self.kind == "convergence_rate":
            if len(self.h_values) < 2:
                raise ValueError("rate studies need at least two mesh sizes")
            for h0, h1 in zip(self.h_values, self.h_values[1:]):
                if not np.isclose(h1, 0.5 * h0, rtol=1e-12):
                    raise ValueError("rate studies need a strictly halving h list")
        if self.forcing == "horizon_layer" and self.delta is None:
            raise ValueError("horizon_layer forcing needs delta")
        if self.family in ("truncated", "tempered") and self.delta is None:
            raise ValueError(f"{self.family} kernels need delta")

    def forcing_for(self, s):
        if self.forcing == "constant":
            return float(self.forcing_value)
        return self.delta ** (2.0 - 2.0 * s) / (1.0 - s)

    def kernel_spec(self, s, p):
        return KernelSpec(d=self.domain.dim, s=s, p=p, family=self.family,
                          delta=self.delta, normalized=self.normalized)

    def echo(self):
        """Canonical key = value lines (config echo, hashed for the manifest)."""
        items = [
            ("kind", self.kind),
            ("domain", self.domain.kind),
            ("a", "%.12g" % self.domain.a),
            ("b", "%.12g" % self.domain.b),
            ("s_values", ", ".join("%.12g" % s for s in self.s_values)),
            ("p_values", ", ".join("%.12g" % p for p in self.p_values)),
            ("h_values", ", ".join("%.12g" % h for h in self.h_values)),
            ("family", self.family),
            ("delta", "none" if self.delta is None else "%.12g" % self.delta),
            ("normalized", str(self.normalized).lower()),
            ("mu", "%.12g" % self.mu),
            ("forcing", self.forcing),
            ("forcing_value", "%.12g" % self.forcing_value),
            ("window", "default" if self.window is None
             else "%.12g, %.12g" % tuple(self.window)),
            ("fit_samples_2d", str(self.fit_samples_2d)),
            ("eps_reg", "%.12g" % self.eps_reg),
            ("backend", self.backend or "auto"),
        ]
        return "\n".join("%s = %s" % kv for kv in items)

    def config_hash(self):
        return hashlib.sha256(self.echo().encode()).hexdigest()


@dataclass
class FitResult:
    """Log-log fit of the solution against boundary distance at one anchor."""

    anchor: str
    point: tuple
    direction: tuple
    alpha: float
    residual: float
    window: tuple
    n_samples: int
    window_sensitivity: float
    s: float = None
    p: float = None
    failed: bool = False
    message: str = ""


@dataclass
class SweepCell:
    """Outcome of one (s, p) cell of a study."""

    s: float
    p: float
    ok: bool
    message: str = ""
    fits: list = field(default_factory=list)
    rates: RateTable = None
    proxies: tuple = ()
    profile: tuple = None
    report_lines: list = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class RunResult:
    config: ExperimentConfig
    cells: list
    seconds: float

    @property
    def all_ok(self):
        return all(c.ok for c in self.cells)


# -- boundary-distance sampling and fitting ------------------------------


def _power_fit(dists, vals):
    ld = np.log(dists)
    lv = np.log(vals)
    A = np.stack([ld, np.ones_like(ld)], axis=1)
    coef, _, _, _ = np.linalg.lstsq(A, lv, rcond=None)
    resid = lv - A @ coef
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return float(coef[0]), rms


def _window_samples_1d(u, anchors, window):
    """Vertex samples pooled over the interval endpoints."""
    mesh = u.mesh
    x = mesh.coords[:, 0]
    uv = u.vertex_values()
    dists, vals = [], []
    for a, dirn in anchors:
        d = (x - a) * dirn
        keep = (d >= window[0]) & (d <= window[1])
        dists.append(d[keep])
        vals.append(uv[keep])
    return np.concatenate(dists), np.concatenate(vals)


def _fit_from_samples(dists, vals, window, label, point, direction):
    pos = vals > 0.0
    dists, vals = dists[pos], vals[pos]
    if dists.size < 4:
        raise ValueError(
            f"{label}: only {dists.size} positive samples in the fit window")
    order = np.argsort(dists)
    alpha, rms = _power_fit(dists[order], vals[order])
    return alpha, rms, dists.size


def _ray_vertex_samples(u, point, dvec):
    """Distances and values at mesh vertices lying on the sampling ray.

    On-ray vertices carry exact nodal values, so when the mesh provides
    them they beat interpolated samples, which sag between graded layers
    and bias the fitted exponent."""
    mesh = u.mesh
    rel = mesh.coords - point[None, :]
    t = rel @ dvec
    perp = np.linalg.norm(rel - t[:, None] * dvec[None, :], axis=1)
    span = mesh.coords.max(axis=0) - mesh.coords.min(axis=0)
    tol = 1e-9 * float(np.linalg.norm(span))
    on = (perp <= tol) & (t > tol)
    d = t[on]
    order = np.argsort(d)
    return d[order], u.vertex_values()[on][order]


def fit_boundary_exponent(u, anchor, direction, window=None, n_samples=12):
    """Fit u ~ dist^alpha along a ray from an anchor on the boundary.

    In 1d the anchor is the endpoint coordinate and the samples are the
    mesh vertices whose distance lies in the window. In 2d the samples
    are taken at on-ray mesh vertices when the ray carries at least four
    of them (their nodal values are exact), and otherwise at n_samples
    log-spaced interpolation points along the direction. The window
    defaults to the first few vertex layers in vertex mode and to
    [2 * local boundary element size, 0.05 * diam] otherwise. Returns a
    FitResult; raises ValueError if fewer than 4 positive samples remain.
    """
    mesh = u.mesh
    if mesh.d == 1:
        point = (float(anchor),)
        dirn = float(np.sign(direction if np.ndim(direction) == 0
                             else direction[0]))
        window = window or _default_window_1d(mesh, float(anchor))
        d, v = _window_samples_1d(u, [(float(anchor), dirn)], window)
        label = "anchor %g" % anchor
        direction_t = (dirn,)

        def take(win):
            return _window_samples_1d(u, [(point[0], dirn)], win)
    else:
        point = tuple(float(c) for c in anchor)
        dvec = np.asarray(direction, dtype=float)
        dvec = dvec / np.linalg.norm(dvec)
        pt = np.asarray(point)
        ray_d, ray_v = _ray_vertex_samples(u, pt, dvec)
        vertex_mode = ray_d.size >= 4
        if window is None:
            if vertex_mode:
                window = (0.5 * ray_d[0], 6.5 * ray_d[0])
            else:
                window = _default_window_2d(mesh, pt)
        label = "anchor (%g, %g)" % point
        direction_t = tuple(dvec)

        def take(win):
            if vertex_mode:
                keep = (ray_d >= win[0]) & (ray_d <= win[1])
                if np.count_nonzero(keep) >= 4:
                    return ray_d[keep], ray_v[keep]
            dd = np.geomspace(win[0], win[1], n_samples)
            pts = pt[None, :] + dd[:, None] * dvec[None, :]
            return dd, mesh.eval_p1(u.vertex_values(), pts)

        d, v = take(window)

    alpha, rms, n = _fit_from_samples(d, v, window, label, point, direction_t)
    sens = 0.0
    for fac in (0.5, 2.0):
        wlo, whi = window[0] * fac, window[1] * fac
        try:
            dp, vp = take((wlo, whi))
            ap, _, _ = _fit_from_samples(dp, vp, (wlo, whi), label, point,
                                         direction_t)
            sens = max(sens, abs(ap - alpha))
        except (ValueError, IndexError):
            continue
    return FitResult(anchor=label, point=point, direction=direction_t,
                     alpha=alpha, residual=rms, window=tuple(window),
                     n_samples=n, window_sensitivity=sens)


def _default_window_1d(mesh, a):
    x = np.sort(mesh.coords[:, 0])
    hb = (x[1] - x[0]) if abs(a - x[0]) < abs(a - x[-1]) else (x[-1] - x[-2])
    diam = x[-1] - x[0]
    return (2.0 * hb, 0.05 * diam)


def _default_window_2d(mesh, point):
    sizes = mesh.element_sizes()
    bary = mesh.barycenters()
    dist = np.linalg.norm(bary - point[None, :], axis=1)
    hb = float(sizes[np.argmin(dist)])
    span = mesh.coords.max(axis=0) - mesh.coords.min(axis=0)
    diam = float(np.sqrt(np.sum(span ** 2)))
    return (2.0 * hb, 0.05 * diam)


_SQ2 = np.sqrt(2.0)

_ANCHORS_2D = {
    "square": (
        ("edge_midpoint", (0.0, 0.5), (0.0, -1.0)),
        ("convex_corner", (-0.5, 0.5), (1.0 / _SQ2, -1.0 / _SQ2)),
    ),
    "l_shape": (
        ("edge_midpoint", (0.0, 0.5), (0.0, -1.0)),
        ("convex_corner", (-0.5, 0.5), (1.0 / _SQ2, -1.0 / _SQ2)),
        ("reentrant_corner", (0.0, 0.0), (-1.0 / _SQ2, 1.0 / _SQ2)),
    ),
}


def _cell_fits(config, u):
    """All anchor fits for one solved cell."""
    mesh = u.mesh
    out = []
    if mesh.d == 1:
        a, b = config.domain.a, config.domain.b
        window = config.window or _default_window_1d(mesh, a)
        try:
            d, v = _window_samples_1d(u, [(a, 1.0), (b, -1.0)], window)
            alpha, rms, n = _fit_from_samples(d, v, window, "endpoint",
                                              (a,), (1.0,))
            sens = 0.0
            for fac in (0.5, 2.0):
                wp = (window[0] * fac, window[1] * fac)
                try:
                    dp, vp = _window_samples_1d(u, [(a, 1.0), (b, -1.0)], wp)
                    ap, _, _ = _fit_from_samples(dp, vp, wp, "endpoint",
                                                 (a,), (1.0,))
                    sens = max(sens, abs(ap - alpha))
                except ValueError:
                    continue
            out.append(FitResult(anchor="endpoint", point=(a,),
                                 direction=(1.0,), alpha=alpha, residual=rms,
                                 window=tuple(window), n_samples=n,
                                 window_sensitivity=sens))
        except ValueError as exc:
            out.append(FitResult(anchor="endpoint", point=(a,),
                                 direction=(1.0,), alpha=np.nan,
                                 residual=np.nan, window=tuple(window),
                                 n_samples=0, window_sensitivity=np.nan,
                                 failed=True, message=str(exc)))
        return out
    for name, pt, dirn in _ANCHORS_2D[config.domain.kind]:
        try:
            fr = fit_boundary_exponent(u, pt, dirn, window=config.window,
                                       n_samples=config.fit_samples_2d)
            fr.anchor = name
            out.append(fr)
        except ValueError as exc:
            out.append(FitResult(anchor=name, point=pt, direction=dirn,
                                 alpha=np.nan, residual=np.nan,
                                 window=(np.nan, np.nan), n_samples=0,
                                 window_sensitivity=np.nan, failed=True,
                                 message=str(exc)))
    return out


# -- studies --------------------------------------------------------------


def _cell_context(config, mesh, s, p):
    spec = config.kernel_spec(s, p)
    return AssemblyContext(mesh, spec, quad=config.quad,
                           eps_reg=config.eps_reg, backend=config.backend)


def _run_boundary_cell(config, mesh, s, p):
    t0 = time.perf_counter()
    cell = SweepCell(s=s, p=p, ok=False)
    ctx = _cell_context(config, mesh, s, p)
    u, rep = solve(ctx, config.forcing_for(s), config.controls)
    cell.report_lines.append(rep.summary())
    if not rep.converged:
        cell.message = "solver did not converge: " + rep.summary()
        cell.seconds = time.perf_counter() - t0
        return cell
    cell.fits = _cell_fits(config, u)
    bad = [f for f in cell.fits if f.failed]
    cell.ok = not bad
    if bad:
        cell.message = "; ".join(f"{f.anchor}: {f.message}" for f in bad)
    for f in cell.fits:
        f.s, f.p = s, p
    if mesh.d == 1:
        order = np.argsort(mesh.coords[:, 0])
        cell.profile = (mesh.coords[order, 0], u.vertex_values()[order])
    cell.seconds = time.perf_counter() - t0
    return cell


def _run_rate_cell(config, meshes, s, p):
    t0 = time.perf_counter()
    cell = SweepCell(s=s, p=p, ok=False)
    f = config.forcing_for(s)
    sols = []
    prev = None
    for mesh in meshes:
        ctx = _cell_context(config, mesh, s, p)
        u0 = None
        if prev is not None and p != 2.0:
            uv = prev.mesh.eval_p1(prev.vertex_values(), mesh.coords)
            u0 = DiscreteFunction.from_vertex_values(mesh, uv)
        u, rep = solve(ctx, f, config.controls, u0=u0)
        cell.report_lines.append(rep.summary())
        if not rep.converged:
            cell.message = ("solver did not converge at level %d: %s"
                            % (len(sols), rep.summary()))
            cell.seconds = time.perf_counter() - t0
            return cell
        sols.append(u)
        prev = u
    proxies = [error_proxy(sols[i], sols[i + 1], s, p, quad=config.quad)
               for i in range(len(sols) - 1)]
    cell.proxies = tuple(proxies)
    cell.rates = fit_rates(config.h_values[:-1], proxies)
    cell.ok = True
    cell.seconds = time.perf_counter() - t0
    return cell


def _run_profile_cell(config, mesh, s, p):
    t0 = time.perf_counter()
    cell = SweepCell(s=s, p=p, ok=False)
    ctx = _cell_context(config, mesh, s, p)
    u, rep = solve(ctx, config.forcing_for(s), config.controls)
    cell.report_lines.append(rep.summary())
    if not rep.converged:
        cell.message = "solver did not converge: " + rep.summary()
        cell.seconds = time.perf_counter() - t0
        return cell
    uv = u.vertex_values()
    if mesh.d == 1:
        order = np.argsort(mesh.coords[:, 0])
        cell.profile = (mesh.coords[order, 0], uv[order])
    else:
        cell.profile = (mesh.coords, uv)
    cell.ok = True
    cell.seconds = time.perf_counter() - t0
    return cell


def run_experiment(config):
    """Run all (s, p) cells of the study; emit outputs if outdir is set.

    Cells are isolated: an exception inside one cell marks that cell
    failed and the sweep continues.
    """
    t0 = time.perf_counter()
    cells = []
    if config.kind == "convergence_rate":
        meshes = [build_mesh(config.domain, h, mu=config.mu)
                  for h in config.h_values]
    else:
        mesh = build_mesh(config.domain, config.h_values[0], mu=config.mu)
    for p in config.p_values:
        for s in config.s_values:
            try:
                if config.kind == "convergence_rate":
                    cell = _run_rate_cell(config, meshes, s, p)
                elif config.kind == "boundary_exponent":
                    cell = _run_boundary_cell(config, mesh, s, p)
                else:
                    cell = _run_profile_cell(config, mesh, s, p)
            except Exception as exc:
                cell = SweepCell(s=s, p=p, ok=False,
                                 message=f"{type(exc).__name__}: {exc}")
            cells.append(cell)
    result = RunResult(config=config, cells=cells,
                       seconds=time.perf_counter() - t0)
    if config.outdir:
        emit_outputs(result, config.outdir)
    return result


def run_boundary_study(config):
    """Boundary-exponent sweep; returns the flat list of FitResults."""
    if config.kind != "boundary_exponent":
        raise ValueError("config.kind must be boundary_exponent")
    result = run_experiment(config)
    fits = []
    for cell in result.cells:
        if cell.fits:
            fits.extend(cell.fits)
        elif not cell.ok:
            fits.append(FitResult(anchor="(cell failed)", point=(),
                                  direction=(), alpha=np.nan, residual=np.nan,
                                  window=(), n_samples=0,
                                  window_sensitivity=np.nan, s=cell.s,
                                  p=cell.p, failed=True,
                                  message=cell.message))
    return fits


def run_convergence_study(config):
    """Rate sweep; returns {(s, p): RateTable} with None for failed cells."""
    if config.kind != "convergence_rate":
        raise ValueError("config.kind must be convergence_rate")
    result = run_experiment(config)
    return {(c.s, c.p): c.rates for c in result.cells}


# -- output emission ------------------------------------------------------


def _fmt(x):
    return "%.12g" % x


def emit_outputs(result, directory):
    """Write the study's CSV tables, profile dumps, and run manifest."""
    import os

    os.makedirs(directory, exist_ok=True)
    config = result.config
    written = []
    if config.kind == "boundary_exponent":
        for p in config.p_values:
            path = os.path.join(directory, "boundary_exponents_p%g.csv" % p)
            with open(path, "w") as fh:
                fh.write("s,p,anchor,alpha,residual\n")
                for cell in result.cells:
                    if cell.p != p:
                        continue
                    for f in cell.fits:
                        if f.failed:
                            continue
                        fh.write("%s,%s,%s,%s,%s\n" % (
                            _fmt(cell.s), _fmt(cell.p), f.anchor,
                            _fmt(f.alpha), _fmt(f.residual)))
            written.append(path)
    elif config.kind == "convergence_rate":
        for p in config.p_values:
            path = os.path.join(directory, "convergence_rates_p%g.csv" % p)
            with open(path, "w") as fh:
                fh.write("s,p,h,proxy_error,rate\n")
                for cell in result.cells:
                    if cell.p != p or not cell.ok:
                        continue
                    hs = config.h_values[:-1]
                    for i, (h, e) in enumerate(zip(hs, cell.proxies)):
                        rate = ("" if i == 0
                                else _fmt(cell.rates.step_rates[i - 1]))
                        fh.write("%s,%s,%s,%s,%s\n" % (
                            _fmt(cell.s), _fmt(cell.p), _fmt(h), _fmt(e),
                            rate))
            written.append(path)
    for cell in result.cells:
        if config.kind in ("profile_dump",) and cell.profile is not None:
            path = os.path.join(
                directory, "profile_s%g_p%g.dat" % (cell.s, cell.p))
            xs, us = cell.profile
            with open(path, "w") as fh:
                if np.ndim(xs) == 1:
                    for x, uv in zip(xs, us):
                        fh.write("%s %s\n" % (_fmt(x), _fmt(uv)))
                else:
                    for row, uv in zip(xs, us):
                        fh.write("%s %s %s\n" % (_fmt(row[0]), _fmt(row[1]),
                                                 _fmt(uv)))
            written.append(path)

    manifest = os.path.join(directory, "manifest.txt")
    with open(manifest, "w") as fh:
        fh.write("config_hash = %s\n\n" % result.config.config_hash())
        fh.write(result.config.echo() + "\n\n")
        fh.write("python = %s\n" % sys.version.split()[0])
        fh.write("numpy = %s\n" % np.__version__)
        import scipy
        fh.write("scipy = %s\n" % scipy.__version__)
        fh.write("fracpfem = %s\n\n" % __version__)
        for cell in result.cells:
            status = "ok" if cell.ok else ("FAILED: " + cell.message)
            fh.write("cell s=%g p=%g: %s (%.2f s)\n"
                     % (cell.s, cell.p, status, cell.seconds))
            for line in cell.report_lines:
                fh.write("  " + line + "\n")
        fh.write("\ntotal_seconds = %.2f\n" % result.seconds)
    written.append(manifest)
    return written
