import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from fracpfem import DomainSpec, KernelSpec, build_mesh
from fracpfem.quadrature import (
    boundary_polygon,
    classify_pair,
    element_rule,
    pair_rule,
    singular_tables_1d,
    tail_factor_interval,
    tail_points_2d,
    upper_gamma,
)

from oracles import radial_primitive_sum, tail_oracle_2d


@pytest.fixture(scope="module")
def mesh1d():
    return build_mesh(DomainSpec(kind="interval", a=-1.0, b=1.0), 0.25)


@pytest.fixture(scope="module")
def mesh2d():
    return build_mesh(DomainSpec(kind="square", a=-0.5, b=0.5), 0.25)


def test_classify_pair(mesh1d, mesh2d):
    assert classify_pair(mesh1d, 3, 3) == "identical"
    assert classify_pair(mesh1d, 3, 4) == "vertex"
    assert classify_pair(mesh1d, 0, 7) == "disjoint"
    seen = set()
    for a in range(mesh2d.n_elements):
        for b in range(mesh2d.n_elements):
            seen.add(classify_pair(mesh2d, a, b))
    assert seen == {"identical", "edge", "vertex", "disjoint"}


def test_pair_rule_weights_sum_to_product_measure(mesh1d, mesh2d):
    vol1 = mesh1d.volumes()
    for a, b in [(0, 0), (0, 1), (0, 5), (3, 4), (2, 2)]:
        rule = pair_rule(mesh1d, a, b)
        assert np.all(rule.w > 0.0)
        assert np.isclose(rule.w.sum(), vol1[a] * vol1[b], rtol=1e-12)
    vol2 = mesh2d.volumes()
    picked = {"identical": 0, "edge": 0, "vertex": 0, "disjoint": 0}
    for a in range(mesh2d.n_elements):
        for b in range(mesh2d.n_elements):
            cls = classify_pair(mesh2d, a, b)
            if picked[cls] >= 3:
                continue
            picked[cls] += 1
            rule = pair_rule(mesh2d, a, b)
            assert np.all(rule.w > 0.0)
            assert np.isclose(rule.w.sum(), vol2[a] * vol2[b], rtol=1e-11)
    assert all(v > 0 for v in picked.values())


def test_pair_rule_integrates_smooth_kernel(mesh1d):
    # moderately regular integrand |x-y|^(1/2) across every pair class
    def f(y, x):
        return abs(x - y) ** 0.5

    x = np.sort(mesh1d.coords[:, 0])
    for a, b in [(0, 0), (2, 3), (1, 4)]:
        rule = pair_rule(mesh1d, a, b, k=12, m=10)
        approx = np.sum(rule.w * np.abs(rule.x[:, 0] - rule.y[:, 0]) ** 0.5)
        exact, _ = dblquad(f, x[a], x[a + 1], x[b], x[b + 1],
                           epsabs=1e-12, epsrel=1e-12)
        assert np.isclose(approx, exact, rtol=1e-8)


def test_singular_tables_shapes():
    tab = singular_tables_1d(0.5, 2.0, 8)
    for key in ("id_t", "id_w", "tc_z", "tc_wz", "tc_w"):
        assert key in tab
        assert np.all(np.isfinite(tab[key]))
    assert np.all(tab["id_t"] > 0.0) and np.all(tab["id_t"] < 1.0)
    assert np.all(tab["id_w"] > 0.0)


def test_element_rule_integrates_affine(mesh2d):
    pts, w, basis = element_rule(mesh2d, 3)
    assert np.allclose(basis.sum(axis=1), 1.0)
    vals = 2.0 * pts[..., 0] - 3.0 * pts[..., 1] + 1.0
    approx = (w * vals).sum(axis=-1)
    exact = []
    for t in range(mesh2d.n_elements):
        tri = mesh2d.coords[mesh2d.elems[t]]
        bc = tri.mean(axis=0)
        exact.append((2.0 * bc[0] - 3.0 * bc[1] + 1.0) * mesh2d.volumes()[t])
    assert np.allclose(approx, exact, rtol=1e-12, atol=1e-14)


def test_upper_gamma_matches_quadrature():
    for a in (-1.0, -0.5, -0.2, 0.3, 1.0):
        for x in (0.3, 1.0, 2.5):
            val = upper_gamma(a, x)
            ref, _ = quad(lambda t: t ** (a - 1.0) * np.exp(-t), x, np.inf,
                          epsabs=1e-14, epsrel=1e-13)
            assert np.isclose(val, ref, rtol=1e-10), (a, x)


def test_tail_factor_interval_reference_value():
    # pure kernel, s p = 1, unnormalized: the exterior factor at the center
    # of (-1, 1) is int_{|r|>1} |r|^(-2) dr = 2
    spec = KernelSpec(d=1, s=0.5, p=2.0, normalized=False)
    assert np.isclose(tail_factor_interval(spec, 0.0, -1.0, 1.0), 2.0,
                      rtol=1e-14)


def test_tail_factor_matches_numerical_primitive():
    grid = np.linspace(0.0, 30.0, 4000)
    specs = [
        (KernelSpec(d=1, s=0.3, p=2.5), 1e-9),
        (KernelSpec(d=1, s=0.5, p=2.0, family="truncated", delta=0.3), 1e-9),
        (KernelSpec(d=1, s=0.6, p=2.0, family="tempered", delta=0.5), 1e-9),
        (KernelSpec(d=1, s=0.5, p=2.0, family="custom", delta=0.5,
                    psi_table=(grid, np.exp(-grid))), 1e-5),
        (KernelSpec(d=1, s=0.4, p=3.0, family="custom", delta=0.5,
                    psi_table=(grid, np.exp(-grid))), 1e-5),
    ]
    for spec, tol in specs:
        for x in (-0.95, -0.4, 0.0, 0.6):
            pkg = tail_factor_interval(spec, x, -1.0, 1.0)
            ora = radial_primitive_sum(spec, 1.0 - x, x + 1.0)
            assert np.isclose(pkg, ora, rtol=tol, atol=1e-13), (spec.family, x)


def test_truncated_tail_vanishes_deep_inside():
    spec = KernelSpec(d=1, s=0.5, p=2.0, family="truncated", delta=0.2)
    # interior points farther than delta from the boundary see no exterior
    assert tail_factor_interval(spec, 0.0, -1.0, 1.0) == 0.0
    assert tail_factor_interval(spec, -0.79, -1.0, 1.0) == 0.0
    assert tail_factor_interval(spec, -0.9, -1.0, 1.0) > 0.0


def test_tail_points_2d_matches_polar_oracle():
    mesh = build_mesh(DomainSpec(kind="l_shape", a=-0.5, b=0.5), 0.25)
    poly = boundary_polygon(mesh)
    pts = np.array([[-0.45, 0.3], [-0.2, -0.2], [0.15, 0.35], [-0.05, 0.02]])
    cases = [
        (KernelSpec(d=2, s=0.5, p=2.0), 1e-10),
        (KernelSpec(d=2, s=0.3, p=2.0), 5e-4),
        (KernelSpec(d=2, s=0.8, p=2.0), 1e-4),
        (KernelSpec(d=2, s=0.5, p=2.0, family="truncated", delta=0.3), 1e-2),
        (KernelSpec(d=2, s=0.5, p=2.0, family="tempered", delta=0.3), 1e-5),
    ]
    for spec, tol in cases:
        vals = tail_points_2d(spec, pts, poly)
        for i, x in enumerate(pts):
            ref = tail_oracle_2d(x, poly, spec)
            assert np.isclose(vals[i], ref, rtol=tol), (spec.family, spec.s, x)


def test_tail_points_2d_angular_refinement_converges():
    # the horizon cutoff puts kinks in the angular profile; refining the
    # per-arc order must drive the factor to the adaptive polar reference
    mesh = build_mesh(DomainSpec(kind="l_shape", a=-0.5, b=0.5), 0.25)
    poly = boundary_polygon(mesh)
    pts = np.array([[-0.45, 0.3], [-0.2, -0.2]])
    for fam, tol in (("truncated", 2e-4), ("tempered", 1e-12)):
        spec = KernelSpec(d=2, s=0.5, p=2.0, family=fam, delta=0.3)
        vals = tail_points_2d(spec, pts, poly, k_theta=64)
        for i, x in enumerate(pts):
            ref = tail_oracle_2d(x, poly, spec)
            assert np.isclose(vals[i], ref, rtol=tol), (fam, x)


def test_tail_points_2d_diverges_toward_boundary():
    mesh = build_mesh(DomainSpec(kind="square", a=-0.5, b=0.5), 0.25)
    poly = boundary_polygon(mesh)
    spec = KernelSpec(d=2, s=0.5, p=2.0)
    d = np.array([0.2, 0.05, 0.0125])
    pts = np.stack([np.zeros_like(d), 0.5 - d], axis=1)
    vals = tail_points_2d(spec, pts, poly)
    assert np.all(np.diff(vals) > 0.0)
    # T ~ d^(-2s) near a straight edge, so dividing d by 4 multiplies T
    # by about 4 when 2s = 1
    growth = vals[2] / vals[1]
    assert 3.0 < growth < 4.5


def test_boundary_polygon_is_closed_loop(mesh2d):
    poly = boundary_polygon(mesh2d)
    assert poly.shape[1] == 2
    # consecutive vertices are distinct, and the loop has the square's corners
    assert np.all(np.linalg.norm(np.diff(np.vstack([poly, poly[:1]]), axis=0),
                                 axis=1) > 0.0)
    corners = {(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)}
    have = {tuple(np.round(v, 12)) for v in poly}
    assert corners <= have
