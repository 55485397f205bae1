import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from conftest import simple_camera
from xrayfield import geometry as g
from xrayfield.errors import BehindCamera, NonMonotonicDistortion, OutOfBounds


# --- rotations ----------------------------------------------------------------

@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_rodrigues_matches_scipy(w):
    w = np.array(w)
    np.testing.assert_allclose(g.rotvec_to_matrix(w), Rotation.from_rotvec(w).as_matrix(), atol=1e-12)


def test_rodrigues_jacobian_finite_difference():
    rng = np.random.default_rng(0)
    for w in [rng.normal(size=3), np.array([1e-4, -2e-4, 3e-5]), np.zeros(3)]:
        _, dr = g.rotvec_to_matrix_jac(w)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-6
            num = (g.rotvec_to_matrix(w + e) - g.rotvec_to_matrix(w - e)) / 2e-6
            np.testing.assert_allclose(dr[i], num, atol=1e-8)


def test_rigid_compose_inverse():
    a = g.Rigid3(np.array([0.3, -0.2, 0.5]), np.array([1.0, 2.0, 3.0]))
    p = np.array([[0.1, 0.2, 0.3], [-1.0, 0.0, 2.0]])
    np.testing.assert_allclose(a.inverse().apply(a.apply(p)), p, atol=1e-12)
    np.testing.assert_allclose(a.compose(a.inverse()).matrix, np.eye(3), atol=1e-12)


# --- projection ---------------------------------------------------------------

def test_on_axis_point_maps_to_principal_point():
    cam = simple_camera(f=1, cx=5, s=1)
    np.testing.assert_allclose(g.project(cam, [0, 0, 1]), [5, 0])


def test_hand_evaluated_projection():
    # u = f X/Z + cx = 2*1/2 + 1, v = s Y = 3*2
    cam = simple_camera(f=2, cx=1, s=3)
    np.testing.assert_allclose(g.project(cam, [1, 2, 2]), [2, 6])


def test_behind_camera_raises():
    cam = simple_camera()
    with pytest.raises(BehindCamera):
        g.project(cam, [0, 0, -1])
    with pytest.raises(BehindCamera):
        g.project(cam, [0, 0, 0])


def test_projection_is_orthographic_along_scan_axis():
    cam = simple_camera(f=3, cx=2, s=4)
    near = g.project(cam, [0.5, 1.0, 1.0])
    far = g.project(cam, [1.0, 1.0, 2.0])
    assert near[1] == far[1] == 4.0
    assert near[0] == pytest.approx(far[0])


# --- distortion ---------------------------------------------------------------

@given(st.floats(-50, 50))
def test_zero_coefficients_are_identity(u):
    intr = g.LpbIntrinsics(10.0, 3.0, 1.0)
    assert g.apply_distortion(intr, u) == pytest.approx(u)
    assert g.undistort(intr, u) == pytest.approx(u)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_principal_point_is_fixed(k1, k2):
    intr = g.LpbIntrinsics(10.0, 3.0, 1.0, k1, k2)
    assert g.apply_distortion(intr, 3.0) == 3.0


def test_undistort_round_trip_on_detector():
    intr = g.LpbIntrinsics(60.0, 32.0, 1.0, 0.05, -0.02)
    u = np.random.default_rng(3).uniform(0, 64, 100)
    back = g.apply_distortion(intr, g.undistort(intr, u, width=64))
    assert np.max(np.abs(back - u)) < 1e-8


def test_monotonic_limit_is_first_derivative_root():
    k1, k2 = -0.3, 0.02
    lim = g.monotonic_limit(k1, k2)
    y = lim * lim
    assert 1 + 3 * k1 * y + 5 * k2 * y * y == pytest.approx(0.0, abs=1e-12)
    assert g.monotonic_limit(0.1, 0.0) == math.inf


def test_fold_over_raises():
    intr = g.LpbIntrinsics(10.0, 32.0, 1.0, -0.2, 0.0)
    with pytest.raises(NonMonotonicDistortion):
        g.undistort(intr, [0.0, 64.0], width=64)


# --- rays ---------------------------------------------------------------------

def test_principal_ray():
    cam = simple_camera(f=1, cx=5, s=1)
    ray = g.generate_ray(cam, (5.0, 0.0))
    np.testing.assert_allclose(ray.origin, [0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(ray.direction, [0, 0, 1], atol=1e-15)


def test_out_of_bounds_pixel():
    cam = simple_camera(size=(10, 10))
    with pytest.raises(OutOfBounds):
        g.generate_ray(cam, (11.0, 2.0))
    with pytest.raises(OutOfBounds):
        g.generate_ray(cam, (2.0, -0.5))


def test_projection_ray_round_trip():
    cam = g.fan_rig(n_views=3, width=64, height=48, k1=0.04, k2=-0.01)[1]
    rng = np.random.default_rng(5)
    px = np.stack([rng.uniform(0, 64, 200), rng.uniform(0, 48, 200)], axis=1)
    o, d = g.generate_rays(cam, px)
    t = rng.uniform(0.5, 6.0, (200, 1))
    uv = g.project(cam, o + t * d)
    assert np.max(np.abs(uv - px)) < 1e-6


def test_directions_are_unit():
    cam = g.fan_rig(width=32, height=32, k1=0.02)[4]
    _, d = g.generate_rays(cam, g.pixel_centers(32, 32))
    np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-12)


def test_camera_rays_backward_finite_difference():
    cams = g.fan_rig(n_views=2, width=16, height=16, k1=0.03, k2=-0.01)
    params = np.stack([c.to_vector() for c in cams])
    s = cams[0].intrinsics.s
    rng = np.random.default_rng(2)
    views = np.array([0, 1, 1])
    uv = rng.uniform(2, 14, (3, 2))
    wo, wd = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))

    def scalar(p, s_):
        o, d, _ = g.camera_rays(p, s_, views, uv)
        return np.sum(o * wo) + np.sum(d * wd)

    _, _, cache = g.camera_rays(params, s, views, uv)
    grad, d_s = g.camera_rays_backward(cache, wo, wd)
    h = 1e-6
    for k in range(2):
        for j in range(10):
            pp, pm = params.copy(), params.copy()
            pp[k, j] += h
            pm[k, j] -= h
            num = (scalar(pp, s) - scalar(pm, s)) / (2 * h)
            assert grad[k, j] == pytest.approx(num, rel=1e-5, abs=1e-7)
    num_s = (scalar(params, s + h) - scalar(params, s - h)) / (2 * h)
    assert d_s == pytest.approx(num_s, rel=1e-5, abs=1e-7)


# --- clipping -----------------------------------------------------------------

def test_axis_aligned_entry_exit():
    box = g.Aabb.cube()
    assert g.ray_aabb_clip(g.Ray(np.array([0.0, 0, -2]), np.array([0.0, 0, 1])), box) == (1.0, 3.0)


def test_origin_inside_clamps_to_zero():
    box = g.Aabb.cube()
    tn, tf = g.ray_aabb_clip(g.Ray(np.array([0.2, 0.1, 0.0]), np.array([0.0, 0, 1])), box)
    assert tn == 0.0 and tf == pytest.approx(1.0)


def test_miss_is_none():
    box = g.Aabb.cube()
    assert g.ray_aabb_clip(g.Ray(np.array([0.0, 3, -2]), np.array([0.0, 0, 1])), box) is None
    assert g.ray_aabb_clip(g.Ray(np.array([0.0, 0, 2]), np.array([0.0, 0, 1])), box) is None


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_clip_interval_lies_in_box(o, d):
    d = np.array(d)
    if np.linalg.norm(d) < 1e-3:
        return
    ray = g.Ray(np.array(o), d / np.linalg.norm(d))
    res = g.ray_aabb_clip(ray, g.Aabb.cube())
    if res is None:
        return
    tn, tf = res
    assert 0.0 <= tn <= tf
    for t in (tn, 0.5 * (tn + tf), tf):
        assert np.all(np.abs(ray.at(t)) <= 1.0 + 1e-9)


def test_slab_clip_backward_finite_difference():
    rng = np.random.default_rng(4)
    o = rng.uniform(-3, 3, (6, 3))
    o[:, 2] = -3.0
    d = rng.normal(size=(6, 3)) * 0.2
    d[:, 2] = 1.0
    box = g.Aabb.cube()
    tn, tf, hit, info = g.slab_clip(o, d, box)
    wn, wf = rng.normal(size=6), rng.normal(size=6)
    do, dd = g.slab_clip_backward(info, tn, tf, wn, wf)
    h = 1e-7
    for arr, grad in ((o, do), (d, dd)):
        for i in range(6):
            for j in range(3):
                old = arr[i, j]
                arr[i, j] = old + h
                a, b, _, _ = g.slab_clip(o, d, box)
                arr[i, j] = old - h
                c, e, _, _ = g.slab_clip(o, d, box)
                arr[i, j] = old
                num = (wn[i] * (a[i] - c[i]) + wf[i] * (b[i] - e[i])) / (2 * h)
                assert grad[i, j] == pytest.approx(num, rel=1e-5, abs=1e-6)


# --- perturbation and serialization -----------------------------------------------

def test_zero_perturbation_is_identity():
    cam = g.fan_rig()[2]
    assert g.perturb_pose(cam, 0.0, 0.0, 9) == cam


def test_perturbation_is_deterministic_and_sized():
    cam = g.fan_rig()[2]
    a = g.perturb_pose(cam, 5.0, 0.05, 3)
    b = g.perturb_pose(cam, 5.0, 0.05, 3)
    assert a == b
    assert g.rotation_angle_deg(a.world_to_camera.matrix, cam.world_to_camera.matrix) == pytest.approx(5.0)
    ca = -a.world_to_camera.matrix.T @ a.world_to_camera.translation
    cc = -cam.world_to_camera.matrix.T @ cam.world_to_camera.translation
    assert np.linalg.norm(ca - cc) == pytest.approx(0.05 * 2 * math.sqrt(3))


def test_camera_json_round_trip():
    cam = g.fan_rig(width=40, height=30, k1=0.01, k2=-0.002)[3]
    d = cam.to_json()
    assert set(d) == {"f", "cx", "s", "k1", "k2", "axis_angle", "translation", "width", "height"}
    assert g.LpbCamera.from_json(d) == cam


def test_fan_rig_spacing():
    cams = g.fan_rig(n_views=9, spacing_deg=40)
    for a, b in zip(cams, cams[1:]):
        assert g.rotation_angle_deg(a.world_to_camera.matrix, b.world_to_camera.matrix) == pytest.approx(40.0)
    # every source looks at the scene: the center projects inside the image
    for c in cams:
        u, v = g.project(c, [0, 0, 0])
        assert 0 < u < c.width and 0 < v < c.height
