import numpy as np
import pytest

from fracpfem import DomainSpec, Mesh, build_graded_mesh_1d, build_mesh


def test_interval_uniform():
    dom = DomainSpec(kind="interval", a=-1.0, b=1.0)
    mesh = build_mesh(dom, 0.25)
    assert mesh.d == 1
    assert mesh.n_elements == 8
    assert mesh.ndof == mesh.n_vertices - 2
    x = np.sort(mesh.coords[:, 0])
    assert x[0] == -1.0 and x[-1] == 1.0
    assert np.allclose(np.diff(x), 0.25)
    assert np.isclose(mesh.element_sizes().sum(), 2.0)
    assert set(np.flatnonzero(mesh.boundary)) == {
        int(np.argmin(mesh.coords[:, 0])),
        int(np.argmax(mesh.coords[:, 0])),
    }


def test_interval_graded_layers():
    dom = DomainSpec(kind="interval", a=0.0, b=1.0)
    mesh = build_mesh(dom, 2.0 ** -6, mu=2.0)
    x = np.sort(mesh.coords[:, 0])
    d = x[1:5] - x[0]
    # distances of the first vertices follow the k^mu law of the grading
    ratio = d / d[0]
    assert np.allclose(ratio, [1.0, 4.0, 9.0, 16.0], rtol=1e-12)
    # symmetric grading toward both endpoints
    assert np.allclose(np.diff(x), np.diff(x)[::-1], rtol=1e-12)


def test_graded_collapses_to_uniform():
    a = build_graded_mesh_1d(0.0, 1.0, 0.125, 1.0)
    b = build_mesh(DomainSpec(kind="interval", a=0.0, b=1.0), 0.125)
    assert np.allclose(np.sort(a.coords[:, 0]), np.sort(b.coords[:, 0]))


def test_square_mesh_measure_and_orientation():
    dom = DomainSpec(kind="square", a=-0.5, b=0.5)
    mesh = build_mesh(dom, 1.0 / 8)
    assert mesh.d == 2
    assert np.isclose(mesh.volumes().sum(), dom.measure())
    assert np.all(mesh.volumes() > 0.0)
    # boundary vertices sit on the boundary of the square
    onb = np.max(np.abs(mesh.coords[mesh.boundary]), axis=1)
    assert np.allclose(onb, 0.5)
    inn = np.max(np.abs(mesh.coords[mesh.interior]), axis=1)
    assert np.all(inn < 0.5)


def test_l_shape_measure_and_hole():
    dom = DomainSpec(kind="l_shape", a=-0.5, b=0.5)
    assert np.isclose(dom.measure(), 0.75)
    mesh = build_mesh(dom, 1.0 / 8)
    assert np.isclose(mesh.volumes().sum(), 0.75)
    bary = mesh.barycenters()
    inside_hole = (bary[:, 0] > 0.0) & (bary[:, 1] < 0.0)
    assert not inside_hole.any()


def test_graded_2d_size_law():
    dom = DomainSpec(kind="square", a=-0.5, b=0.5)
    h, mu = 1.0 / 8, 2.0
    mesh = build_mesh(dom, h, mu=mu)
    sizes = mesh.element_sizes()
    bary = mesh.barycenters()
    dist = 0.5 - np.max(np.abs(bary), axis=1)
    target = np.maximum(h ** mu, h * dist ** ((mu - 1.0) / mu))
    assert np.all(sizes <= 2.0 * target + 1e-12)
    assert sizes.min() < h ** mu * 1.5


def test_eval_p1_reproduces_linears():
    dom1 = DomainSpec(kind="interval", a=-1.0, b=1.0)
    m1 = build_mesh(dom1, 0.125)
    vals = 3.0 * m1.coords[:, 0] - 0.7
    pts = np.linspace(-1.0, 1.0, 41)
    assert np.allclose(m1.eval_p1(vals, pts[:, None]), 3.0 * pts - 0.7)

    dom2 = DomainSpec(kind="square", a=-0.5, b=0.5)
    m2 = build_mesh(dom2, 0.25)
    vals2 = 2.0 * m2.coords[:, 0] - m2.coords[:, 1] + 0.25
    rng = np.random.default_rng(3)
    pts2 = rng.uniform(-0.49, 0.49, size=(50, 2))
    assert np.allclose(m2.eval_p1(vals2, pts2),
                       2.0 * pts2[:, 0] - pts2[:, 1] + 0.25)


def test_locate_finds_containing_element():
    dom = DomainSpec(kind="l_shape", a=-0.5, b=0.5)
    mesh = build_mesh(dom, 0.25)
    bary = mesh.barycenters()
    idx = mesh.locate(bary)
    assert np.array_equal(idx, np.arange(mesh.n_elements))


def test_dump_load_roundtrip(tmp_path):
    dom = DomainSpec(kind="square", a=-0.5, b=0.5)
    mesh = build_mesh(dom, 0.25)
    path = tmp_path / "mesh.txt"
    mesh.dump(path)
    back = Mesh.load(path)
    assert back.d == mesh.d
    assert np.array_equal(back.coords, mesh.coords)
    assert np.array_equal(back.elems, mesh.elems)
    assert np.array_equal(back.boundary, mesh.boundary)


def test_domain_validation():
    with pytest.raises(ValueError):
        DomainSpec(kind="disk", a=0.0, b=1.0)
    with pytest.raises(ValueError):
        DomainSpec(kind="interval", a=1.0, b=0.0)
    with pytest.raises(ValueError):
        build_mesh(DomainSpec(kind="interval", a=0.0, b=1.0), 0.25, mu=0.5)
