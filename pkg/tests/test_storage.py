import numpy as np
import pytest

from xrayfield import storage as sg, trainer as tr
from xrayfield.errors import BadCheckpoint
from xrayfield.field import ModelConfig, RenderConfig
from xrayfield.geometry import Aabb, fan_rig
from xrayfield.phantom import VoxelGrid, make_phantom
from xrayfield.projector import synthesize_dataset

TINY = ModelConfig(n_spectral=2, n_bands=3, field_hidden=1, field_width=8, color_hidden=1, color_width=8)


def tiny_params(seed=0):
    return tr.build_params(tr.TrainConfig(model=TINY, seed=seed), fan_rig(n_views=3, width=12, height=10))


def test_voxel_round_trip(tmp_path):
    data = np.random.default_rng(0).random((2, 3, 4, 5)).astype(np.float32).astype(np.float64)
    grid = VoxelGrid(data, Aabb(np.array([-1.0, -2, -3]), np.array([1.0, 2, 3])))
    sg.save_voxels(tmp_path / "v.raw", grid)
    back = sg.load_voxels(tmp_path / "v.raw")
    np.testing.assert_array_equal(back.data, data)
    assert back.bounds == grid.bounds
    meta = sg.load_json(tmp_path / "v.raw.json")
    assert meta["dims"] == [5, 4, 3] and meta["channels"] == 2
    assert (tmp_path / "v.raw").stat().st_size == data.size * 4


def test_truncated_voxels_rejected(tmp_path):
    grid = VoxelGrid(np.zeros((1, 2, 2, 2)), Aabb.cube())
    sg.save_voxels(tmp_path / "v.raw", grid)
    (tmp_path / "v.raw").write_bytes(b"\0" * 12)
    with pytest.raises(ValueError):
        sg.load_voxels(tmp_path / "v.raw")


def test_dataset_round_trip(tmp_path):
    scene = make_phantom(1, n_objects=2)
    cams = fan_rig(n_views=3, width=16, height=12)
    ds = synthesize_dataset(scene, cams, grid_dims=(16, 16, 16), keep_transmittance=True)
    sg.save_dataset(tmp_path, ds, ["train", "train", "test"])
    back, labels = sg.load_dataset(tmp_path)
    assert labels == ["train", "train", "test"]
    assert back.s == ds.s and back.bounds == ds.bounds
    for a, b in zip(ds.images, back.images):
        assert np.abs(a.pixels - b.pixels).max() <= 0.5 / 255 + 1e-12
        assert a.camera == b.camera
        assert [x.to_json() for x in a.boxes] == [x.to_json() for x in b.boxes]
    test, _ = sg.load_dataset(tmp_path, "test")
    assert len(test.images) == 1 and test.images[0].view == 2
    with pytest.raises(ValueError):
        sg.load_dataset(tmp_path, "val")


def test_checkpoint_round_trip_is_byte_stable(tmp_path):
    params = tiny_params()
    sg.save_checkpoint(tmp_path / "a.bin", params, TINY, 5, Aabb.cube(), RenderConfig(7))
    loaded, header = sg.load_checkpoint(tmp_path / "a.bin")
    assert header["iteration"] == 5 and header["render"]["samples_per_ray"] == 7
    sg.save_checkpoint(tmp_path / "b.bin", loaded, TINY, 5, Aabb.cube(), RenderConfig(7))
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    for k, v in params.arrays().items():
        np.testing.assert_array_equal(loaded.arrays()[k], v.astype(np.float32))


def test_checkpoint_header_layout(tmp_path):
    sg.save_checkpoint(tmp_path / "a.bin", tiny_params(), TINY, 0, Aabb.cube())
    blob = (tmp_path / "a.bin").read_bytes()
    assert blob[:8] == sg.MAGIC
    n = int.from_bytes(blob[8:12], "little")
    import json
    header = json.loads(blob[12:12 + n])
    assert {"architecture", "n_spectral", "L", "band_weights", "arrays"} <= set(header)
    assert header["n_spectral"] == 2 and header["L"] == 3


@pytest.mark.parametrize("damage", ["magic", "truncate", "header"])
def test_corrupt_checkpoints(tmp_path, damage):
    path = tmp_path / "a.bin"
    sg.save_checkpoint(path, tiny_params(), TINY, 0, Aabb.cube())
    blob = bytearray(path.read_bytes())
    if damage == "magic":
        blob[0:4] = b"JUNK"
    elif damage == "truncate":
        blob = blob[:-3]
    else:
        blob[14] = 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(BadCheckpoint):
        sg.load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(BadCheckpoint):
        sg.load_checkpoint(tmp_path / "nope.bin")


def test_history_csv(tmp_path):
    rows = [{"iteration": 1, "loss": 0.5, "psnr": float("inf"), "elapsed": 0.1,
             "mean_rot_deg": 1.0, "mean_trans": 0.1, "rot_err": [1.0, 1.0], "trans_err": [0.1, 0.1]}]
    sg.save_history(tmp_path / "h.csv", rows)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,psnr,elapsed,mean_rot_deg,mean_trans,rot_err_0,rot_err_1,trans_err_0,trans_err_1"
    assert lines[1].split(",")[2] == "inf"
