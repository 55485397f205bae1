import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from matplotlib.colors import rgb_to_hsv

from xrayfield import phantom as ph
from xrayfield.errors import DomainError
from xrayfield.geometry import Aabb, Rigid3

# Compton ratio sigma_KN(120 keV) / sigma_KN(60 keV) from numerically
# integrating the differential Klein-Nishina cross-section (scipy quad).
KN_RATIO_120_60 = 0.863736913649771


def test_compton_basis_matches_integrated_cross_section():
    assert float(ph.f_comp(120.0)) == pytest.approx(KN_RATIO_120_60, rel=1e-12)
    assert float(ph.f_comp(60.0)) == 1.0
    assert float(ph.f_photo(120.0)) == pytest.approx(1 / 8)


def test_vacuum_material():
    basis = ph.SpectralBasis((40.0, 60.0, 90.0))
    np.testing.assert_array_equal(ph.Material("air", 0.0, 0.0).mu(basis), 0.0)


def test_single_term_material():
    basis = ph.SpectralBasis((40.0, 60.0, 90.0))
    m = ph.Material("c", 0.7, 0.0)
    for j, e in enumerate(basis.energies):
        assert ph.attenuation_at(m, basis, j) == 0.7 * float(ph.f_comp(e))


def test_metals_are_more_energy_dependent():
    basis = ph.SpectralBasis()
    ratio = {k: m.mu(basis)[1] / m.mu(basis)[0] for k, m in ph.PRESET_MATERIALS.items()}
    assert ratio["heavy_metal"] < ratio["light_metal"] < ratio["organic"] < ratio["plastic"]


def test_empty_scene_is_zero():
    grid = ph.voxelize(ph.SpectralScene((), Aabb.cube()), (8, 8, 8))
    assert grid.data.shape == (2, 8, 8, 8)
    assert not grid.data.any()


def test_sphere_volume_fraction():
    mat = ph.PRESET_MATERIALS["organic"]
    sphere = ph.Primitive("sphere", (0.5,), Rigid3.identity(), mat)
    grid = ph.voxelize(ph.SpectralScene((sphere,), Aabb.cube()), (64, 64, 64))
    frac = np.count_nonzero(grid.data[0]) / 64**3
    expected = (4 / 3) * math.pi * 0.5**3 / 8
    assert abs(frac / expected - 1) < 0.03


def test_voxel_layout_x_fastest():
    mat = ph.PRESET_MATERIALS["plastic"]
    box = ph.Primitive("box", (0.2, 0.9, 0.9), Rigid3(np.zeros(3), np.array([0.7, 0.0, 0.0])), mat)
    grid = ph.voxelize(ph.SpectralScene((box,), Aabb.cube()), (10, 4, 4))
    occ = grid.data[0] > 0
    assert occ.shape == (4, 4, 10)
    assert occ[:, :, -2].all() and not occ[:, :, :5].any()
    np.testing.assert_allclose(grid.centers()[0, 0, 0], [-0.9, -0.75, -0.75])


@pytest.mark.parametrize("shape,params", [("sphere", (0.3,)), ("box", (0.3, 0.2, 0.1)), ("cylinder", (0.2, 0.3))])
def test_surface_samples_lie_on_surface(shape, params):
    prim = ph.Primitive(shape, params, Rigid3(np.array([0.0, 0.0, 0.4]), np.array([0.1, -0.2, 0.3])),
                        ph.PRESET_MATERIALS["organic"])
    pts = prim.surface_samples(500)
    local = prim.to_local(pts)
    inner = prim.pose.apply(local * 0.98)
    outer = prim.pose.apply(local * 1.02)
    assert prim.contains(inner).all()
    assert not prim.contains(outer).any()


def test_scene_must_fit_bounds():
    prim = ph.Primitive("sphere", (0.5,), Rigid3(np.zeros(3), np.array([0.8, 0, 0])),
                        ph.PRESET_MATERIALS["organic"])
    with pytest.raises(ValueError):
        ph.SpectralScene((prim,), Aabb.cube())


def test_white_for_no_attenuation():
    np.testing.assert_allclose(ph.reference_color_map(np.array([1.0, 1.0])), [1, 1, 1])


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_equal_transmittance_is_organic_and_monotone(t, u):
    lo, hi = sorted((t, u))
    a = ph.reference_color_map(np.array([lo, lo]))
    b = ph.reference_color_map(np.array([hi, hi]))
    for c in (a, b):
        assert rgb_to_hsv(c)[0] == pytest.approx(ph.ORGANIC_HUE, abs=1e-9)
    assert a.sum() <= b.sum() + 1e-12


def test_metal_renders_blue():
    basis = ph.SpectralBasis()
    t = np.exp(-0.5 * ph.PRESET_MATERIALS["heavy_metal"].mu(basis))
    rgb = ph.reference_color_map(t)
    assert rgb[2] > rgb[0]


@pytest.mark.parametrize("bad", [[1.2, 0.5], [-0.1, 0.5], [np.nan, 0.5]])
def test_color_map_domain(bad):
    with pytest.raises(DomainError):
        ph.reference_color_map(np.array(bad))


def test_phantom_determinism_and_count():
    assert ph.make_phantom(7).to_json() == ph.make_phantom(7).to_json()
    assert len(ph.make_phantom(3, n_objects=1).primitives) == 1


@given(st.integers(0, 10_000))
def test_phantom_objects_disjoint_and_inside(seed):
    scene = ph.make_phantom(seed, n_objects=4)
    prims = scene.primitives
    assert {p.material.name for p in prims} == set(ph.PRESET_MATERIALS)
    for i, a in enumerate(prims):
        lo, hi = a.world_extent()
        assert np.all(lo >= scene.bounds.min) and np.all(hi <= scene.bounds.max)
        for b in prims[i + 1:]:
            gap = np.linalg.norm(a.pose.translation - b.pose.translation)
            assert gap > a.bounding_radius() + b.bounding_radius()


def test_scene_json_round_trip(tmp_path):
    scene = ph.make_phantom(11, n_objects=3)
    scene.save(tmp_path / "scene.json")
    assert ph.SpectralScene.load(tmp_path / "scene.json").to_json() == scene.to_json()
