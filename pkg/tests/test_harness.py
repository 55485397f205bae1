import numpy as np
import pytest

from xrayfield import harness as hs, storage as sg, trainer as tr
from xrayfield.errors import BadCheckpoint, DimMismatch
from xrayfield.field import ModelConfig, RenderConfig, background_color, field_forward
from xrayfield.geometry import Aabb, fan_rig
from xrayfield.phantom import voxel_centers

SMALL = ModelConfig(n_spectral=3, n_bands=2, field_hidden=2, field_width=16, color_hidden=1, color_width=8)


@pytest.fixture
def ckpt(tmp_path):
    cams = fan_rig(n_views=3, width=20, height=16)
    params = tr.build_params(tr.TrainConfig(model=SMALL), cams)
    path = tmp_path / "c.bin"
    sg.save_checkpoint(path, params, SMALL, 0, Aabb.cube(), RenderConfig(12))
    return path


def test_constant_color_network_gives_flat_frames(ckpt):
    params, header = sg.load_checkpoint(ckpt)
    for w in params.color.mlp.weights:
        w[...] = 0.0
    frames = hs.render_novel_views((params, header), params.camera_list()[:2])
    expected = 1 / (1 + np.exp(-params.color.mlp.biases[-1].astype(np.float64)))
    for f in frames:
        assert f.shape == (16, 20, 3)
        np.testing.assert_allclose(f, np.broadcast_to(expected, f.shape), rtol=1e-6)


def test_zero_field_renders_background(ckpt):
    params, header = sg.load_checkpoint(ckpt)
    params.field.mlp.biases[-1][...] = -200.0  # softplus underflows to exactly zero attenuation
    params.field.mlp.weights[-1][...] = 0.0
    frames = hs.render_novel_views((params, header), params.camera_list()[:1])
    bg = background_color(params.color, RenderConfig(12))
    np.testing.assert_array_equal(frames[0], np.broadcast_to(bg, frames[0].shape))


def test_render_is_deterministic(ckpt):
    a = hs.render_novel_views(ckpt, fan_rig(n_views=2, width=20, height=16))
    b = hs.render_novel_views(ckpt, fan_rig(n_views=2, width=20, height=16))
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_render_resize(ckpt):
    frames = hs.render_novel_views(ckpt, fan_rig(n_views=1 + 1, width=20, height=16), size=(10, 8))
    assert frames[0].shape == (8, 10, 3)


def test_export_matches_field_and_is_non_negative(ckpt):
    params, header = sg.load_checkpoint(ckpt)
    grid = hs.export_voxels((params, header), (6, 5, 4))
    assert grid.data.shape == (3, 4, 5, 6)
    pts = voxel_centers((6, 5, 4), Aabb.cube()).reshape(-1, 3)
    direct = field_forward(params.field, pts)
    np.testing.assert_array_equal(np.moveaxis(grid.data, 0, -1).reshape(-1, 3), direct)
    assert grid.data.min() >= 0


def test_export_refinement_is_consistent(ckpt):
    coarse = hs.export_voxels(ckpt, (8, 8, 8)).data
    fine = hs.export_voxels(ckpt, (16, 16, 16)).data
    pooled = fine.reshape(3, 8, 2, 8, 2, 8, 2).mean(axis=(2, 4, 6))
    assert np.abs(pooled - coarse).max() <= 0.05 * max(coarse.max(), 1e-9)


def test_export_rejects_bad_dims(ckpt):
    with pytest.raises(ValueError):
        hs.export_voxels(ckpt, (4, 4))


def test_bad_checkpoint_path(tmp_path):
    with pytest.raises(BadCheckpoint):
        hs.render_novel_views(tmp_path / "missing.bin", fan_rig(n_views=2))


def test_evaluate_images():
    rng = np.random.default_rng(0)
    a = [rng.random((16, 16, 3)) for _ in range(2)]
    rep = hs.evaluate_images(a, a, views=[4, 7])
    assert [r["view"] for r in rep["per_view"]] == [4, 7]
    assert rep["mean_psnr"] == float("inf") and rep["mean_ssim"] == 1.0
    with pytest.raises(ValueError):
        hs.evaluate_images(a, a[:1])
    with pytest.raises(DimMismatch):
        hs.evaluate_images(a, [x[:8] for x in a])


def test_orbit_cameras_share_intrinsics():
    ref = fan_rig(n_views=2, width=24, height=12)
    orbit = hs.orbit_cameras(ref, 5)
    assert len(orbit) == 5 and all(c.intrinsics == ref[0].intrinsics for c in orbit)


def test_gradient_check_small():
    worst = hs.gradient_check(seed=3)
    assert set(worst) >= {"cameras", "s", "field.0", "color.0"}
    assert max(worst.values()) < 1e-4
