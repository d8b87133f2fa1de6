import math

import numpy as np
import pytest

from aet.fem import boundary_load
from aet.io import read_pgm, write_pgm
from aet.mesh import generate_disk_mesh
from aet.operator import norm_y
from aet.phantom import (
    Disk,
    Ellipse,
    GeometrySpec,
    Polygon,
    add_noise,
    currents_full,
    currents_limited,
    default_geometry,
    geometric_phantom,
    image_phantom,
    locate_points,
    rasterize,
    synthesize_data,
    transfer_elementwise,
)


def test_empty_geometry_is_background(small_mesh):
    assert np.all(geometric_phantom(small_mesh, GeometrySpec(1.5)) == 1.5)


def test_default_phantom_values(mesh16):
    s = geometric_phantom(mesh16)
    assert s.max() == 3.0
    assert set(np.unique(s)) <= {1.0, 1.8, 2.5, 3.0}
    assert np.mean(s == 1.0) > 0.5


def test_background_fraction_matches_shape_areas():
    # area oracle: ellipse pi a b, disk pi r^2, L-hexagon 0.22*0.07 + 0.08*0.11
    mesh = generate_disk_mesh(0.5, 1 / 64)
    s = geometric_phantom(mesh)
    covered = math.pi * 0.12 * 0.07 + math.pi * 0.09**2 + 0.22 * 0.07 + 0.08 * 0.11
    frac = np.sum(mesh.node_mass * (s != 1.0)) / mesh.node_mass.sum()
    assert frac == pytest.approx(covered / (math.pi / 4), abs=0.01)


def test_polygon_contains():
    sq = Polygon(((0, 0), (1, 0), (1, 1), (0, 1)), 2.0)
    assert list(sq.contains(np.array([0.5, 1.5]), np.array([0.5, 0.5]))) == [True, False]
    L = default_geometry().shapes[2]
    assert L.contains(np.array(-0.08), np.array(-0.12))
    assert not L.contains(np.array(0.05), np.array(-0.12))


def test_shape_outside_disk_rejected(small_mesh):
    spec = GeometrySpec(1.0, (Disk((0.45, 0.0), 0.1, 2.0),))
    with pytest.raises(ValueError):
        geometric_phantom(small_mesh, spec)


@pytest.mark.parametrize("bad", [dict(background=0.0), dict(shapes=(Ellipse((0, 0), (0.1, 0.1), -1.0),))])
def test_invalid_geometry(bad):
    with pytest.raises(ValueError):
        GeometrySpec(**bad)


def test_constant_image(small_mesh):
    s = image_phantom(np.full((5, 7), 100.0), small_mesh, (1.0, 2.0), maxval=200)
    assert np.allclose(s, 1.5)


def test_checkerboard_image(mesh16):
    img = np.array([[0.0, 1.0], [1.0, 0.0]])
    s = image_phantom(img, mesh16, (1.0, 2.0), maxval=1)
    x, y = mesh16.nodes.T
    far = (np.abs(x) > 0.3) & (np.abs(y) > 0.3)
    expected = np.where((x > 0) == (y > 0), 2.0, 1.0)
    assert np.allclose(s[far], expected[far])
    assert np.all((s >= 1.0) & (s <= 2.0))


def test_image_validation(small_mesh):
    with pytest.raises(ValueError):
        image_phantom(np.zeros((0, 0)), small_mesh, (1, 2))
    with pytest.raises(ValueError):
        image_phantom(np.ones((3, 3)), small_mesh, (0, 2))


def test_pgm_round_trip_correlation(tmp_path, mesh16):
    s = geometric_phantom(mesh16)
    img = rasterize(mesh16, s, (96, 96), fill=1.0)
    gray = np.rint(255 * (img - 1.0) / 2.0)
    write_pgm(tmp_path / "p.pgm", gray)
    raster, maxval = read_pgm(tmp_path / "p.pgm")
    back = image_phantom(raster, mesh16, (1.0, 3.0), maxval)
    assert np.corrcoef(back, s)[0, 1] >= 0.99


def test_full_currents():
    cur = currents_full()
    assert len(cur) == 4
    assert cur[2](0.5, 0.0) == pytest.approx(0.353553, abs=1e-6)


def test_currents_integrate_to_zero(small_mesh):
    for c in currents_full():
        assert abs(boundary_load(small_mesh, c).sum()) < 1e-10


def test_limited_currents(small_mesh):
    cur = currents_limited(math.pi, 3)
    assert len(cur) == 3
    th = np.linspace(math.pi + 0.01, 2 * math.pi - 0.01, 50)
    assert not cur[0](0.5 * np.cos(th), 0.5 * np.sin(th)).any()
    for c in cur:
        load = boundary_load(small_mesh, c, tol=0.05)
        assert abs(load.sum()) < 0.02 * np.abs(load).sum()


def test_limited_full_circle_is_sine():
    c = currents_limited(2 * math.pi, 1)[0]
    th = np.linspace(0, 2 * math.pi, 13, endpoint=False)
    assert np.allclose(c(np.cos(th), np.sin(th)), np.sin(th))


@pytest.mark.parametrize("bad", [(0.0, 4), (-1.0, 4), (7.0, 4), (math.pi, 0)])
def test_limited_validation(bad):
    with pytest.raises(ValueError):
        currents_limited(*bad)


def test_locate_points(small_mesh):
    tri, fb = locate_points(small_mesh, small_mesh.centroids)
    assert np.array_equal(tri, np.arange(small_mesh.n_triangles))
    assert not fb.any()


def test_same_mesh_transfer_is_identity(small_mesh, rng):
    v = rng.random(small_mesh.n_triangles)
    out, fb = transfer_elementwise(small_mesh, v, small_mesh)
    assert np.array_equal(out, v) and fb == 0


def test_synthesized_constant_case(small_mesh):
    fine = generate_disk_mesh(0.5, 1 / 32)
    y, fb = synthesize_data(fine, np.ones(fine.n_nodes), currents_full()[:1], small_mesh)
    assert fb == 0
    assert np.abs(y[0] - 0.25).max() < 0.01


def test_default_meshes_have_no_fallbacks():
    fine, coarse = generate_disk_mesh(0.5, 0.01), generate_disk_mesh(0.5, 1 / 64)
    _, fb = locate_points(fine, coarse.centroids)
    assert not fb.any()


def test_synthesis_consistent_across_coarse_meshes():
    fine = generate_disk_mesh(0.5, 1 / 48)
    c1, c2 = generate_disk_mesh(0.5, 1 / 8), generate_disk_mesh(0.5, 1 / 16)
    sig = 1 + 0.5 * fine.nodes[:, 0] ** 2
    y1, _ = synthesize_data(fine, sig, currents_full()[:1], c1)
    y2, _ = synthesize_data(fine, sig, currents_full()[:1], c2)
    # compare at the coarse-1 centroids through the coarse-2 field
    tri, _ = locate_points(c2, c1.centroids)
    assert np.abs(y1[0] - y2[0][tri]).max() < 0.02


@pytest.mark.parametrize("level", [0.0, 0.08, 0.008])
def test_noise_level_exact(small_mesh, rng, level):
    y = 0.25 + rng.random(small_mesh.n_triangles)
    yd, d = add_noise(small_mesh, y, level, 2.2, 7)
    if level == 0:
        assert np.array_equal(yd, y) and d == 0
    else:
        assert abs(norm_y(small_mesh, yd - y, 2.2) / norm_y(small_mesh, y, 2.2) - level) < 1e-12
        assert d == pytest.approx(level * norm_y(small_mesh, y, 2.2))


def test_noise_reproducible(small_mesh):
    ys = [np.ones(small_mesh.n_triangles)] * 2
    a, _ = add_noise(small_mesh, ys, 0.1, 2.2, 5)
    b, _ = add_noise(small_mesh, ys, 0.1, 2.2, 5)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[0], a[1])


def test_negative_noise_rejected(small_mesh):
    with pytest.raises(ValueError):
        add_noise(small_mesh, np.ones(small_mesh.n_triangles), -0.1, 2.2)
