"""On-disk formats.

* Voxel grids: raw little-endian float32, channel-major then z, y, x, with a
  ``<file>.json`` sidecar ``{dims, channels, bounds}``.
* Datasets: a directory of 8-bit RGB PNGs, one JSON per image
  ``{camera, boxes, view, split}`` and ``manifest.json``.
* Checkpoints: ``MAGIC``, a uint32 LE header length, a JSON header, then
  every parameter as little-endian float32 in header order.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadCheckpoint
from .field import ColorNet, FieldNet, FreqEncoder, ModelConfig, Mlp, RenderConfig
from .geometry import Aabb, LpbCamera
from .metrics import to_uint8
from .phantom import VoxelGrid
from .projector import Bbox2, Dataset, ProjectionImage

MAGIC = b"XRFCKPT1"
LE_F32 = np.dtype("<f4")


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# raw float arrays
# ---------------------------------------------------------------------------

def save_raw(path, data: np.ndarray, meta: dict) -> None:
    path = Path(path)
    np.ascontiguousarray(data, dtype=LE_F32).tofile(path)
    dump_json(meta, str(path) + ".json")


def save_voxels(path, grid: VoxelGrid) -> None:
    save_raw(path, grid.data, {"dims": list(grid.dims), "channels": grid.channels,
                               "bounds": grid.bounds.to_json()})


def load_voxels(path) -> VoxelGrid:
    meta = load_json(str(path) + ".json")
    nx, ny, nz = meta["dims"]
    c = int(meta["channels"])
    data = np.fromfile(path, dtype=LE_F32)
    if data.size != c * nx * ny * nz:
        raise ValueError(f"{path}: expected {c * nx * ny * nz} floats, found {data.size}")
    return VoxelGrid(data.reshape(c, nz, ny, nx).astype(np.float64), Aabb.from_json(meta["bounds"]))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def _stem(k: int) -> str:
    return f"view_{k:03d}"


def save_image(path, rgb) -> None:
    Image.fromarray(to_uint8(rgb), mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_dataset(root, ds: Dataset, splits=None) -> None:
    """``splits`` optionally labels each image ("train" or "test")."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    splits = list(splits) if splits is not None else ["train"] * len(ds.images)
    names = []
    for k, (im, split) in enumerate(zip(ds.images, splits)):
        stem = _stem(k)
        save_image(root / f"{stem}.png", im.pixels)
        dump_json({"camera": im.camera.to_json(), "boxes": [b.to_json() for b in im.boxes],
                   "view": im.view, "split": split}, root / f"{stem}.json")
        if ds.transmittance is not None:
            t = np.moveaxis(ds.transmittance[k], -1, 0)
            save_raw(root / f"{stem}.trans.raw", t[:, None],
                     {"dims": [im.width, im.height, 1], "channels": t.shape[0], "bounds": None})
        names.append(stem)
    dump_json({"bounds": ds.bounds.to_json(), "s": ds.s, "n_images": len(names), "images": names},
              root / "manifest.json")


def load_dataset(root, split: str | None = None) -> tuple[Dataset, list]:
    """Returns the dataset and the per-image split labels; ``split`` filters images."""
    root = Path(root)
    man = load_json(root / "manifest.json")
    images, labels = [], []
    for stem in man["images"]:
        meta = load_json(root / f"{stem}.json")
        lab = meta.get("split", "train")
        if split is not None and lab != split:
            continue
        view = int(meta.get("view", len(images)))
        boxes = [Bbox2.from_json(b, view) for b in meta.get("boxes", [])]
        images.append(ProjectionImage(load_image(root / f"{stem}.png"), LpbCamera.from_json(meta["camera"]),
                                      boxes, view))
        labels.append(lab)
    if len(images) == 0:
        raise ValueError(f"{root}: no images" + (f" in split {split!r}" if split else ""))
    return Dataset(images, float(man["s"]), Aabb.from_json(man["bounds"])), labels


def load_image_dir(root) -> list:
    """Sorted (name, rgb) pairs of every PNG in a directory."""
    root = Path(root)
    return [(p.name, load_image(p)) for p in sorted(root.glob("*.png"))]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _mlp_spec(mlp: Mlp) -> dict:
    return {"sizes": mlp.sizes, "hidden": mlp.hidden, "output": mlp.output}


def save_checkpoint(path, params, model: ModelConfig, iteration: int, bounds: Aabb,
                    render: RenderConfig | None = None, extra: dict | None = None) -> None:
    arrays = params.arrays()
    header = {
        "architecture": {"model": model.to_json(), "field": _mlp_spec(params.field.mlp),
                         "color": _mlp_spec(params.color.mlp)},
        "n_spectral": params.field.n_spectral,
        "L": params.field.encoder.n_bands,
        "band_weights": [float(w) for w in params.field.encoder.weights],
        "iteration": int(iteration),
        "bounds": bounds.to_json(),
        "image_sizes": [list(map(int, s)) for s in params.image_sizes],
        "render": (render or RenderConfig()).to_json(),
        "arrays": [{"name": k, "shape": list(a.shape)} for k, a in arrays.items()],
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype=LE_F32).tobytes())


def load_checkpoint(path, dtype=np.float32):
    """Returns ``(params, header)``."""
    from .trainer import ParamSet

    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise BadCheckpoint(f"cannot read {path}: {exc}") from exc
    if not blob.startswith(MAGIC) or len(blob) < len(MAGIC) + 4:
        raise BadCheckpoint(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(blob[start:start + n].decode("utf-8"))
        arch = header["architecture"]
        specs = header["arrays"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise BadCheckpoint(f"{path}: corrupt header ({exc})") from exc
    body = blob[start + n:]
    need = sum(int(np.prod(s["shape"])) for s in specs) * 4
    if len(body) != need:
        raise BadCheckpoint(f"{path}: expected {need} parameter bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype=LE_F32)
    values, off = {}, 0
    for s in specs:
        size = int(np.prod(s["shape"]))
        values[s["name"]] = flat[off:off + size].reshape(s["shape"])
        off += size

    try:
        model = ModelConfig(**arch["model"])

        def mlp(prefix, spec):
            net = Mlp.__new__(Mlp)
            net.sizes, net.hidden, net.output = list(spec["sizes"]), spec["hidden"], spec["output"]
            n_layers = len(net.sizes) - 1
            net.weights = [values[f"{prefix}.{2 * i}"].astype(dtype) for i in range(n_layers)]
            net.biases = [values[f"{prefix}.{2 * i + 1}"].astype(dtype) for i in range(n_layers)]
            return net

        enc = FreqEncoder(int(header["L"]), model.include_input, header["band_weights"])
        fnet = FieldNet(enc, mlp("field", arch["field"]))
        cnet = ColorNet(mlp("color", arch["color"]))
        params = ParamSet(fnet, cnet, values["cameras"].astype(np.float64),
                          values["s"].astype(np.float64), [tuple(s) for s in header["image_sizes"]])
    except (KeyError, ValueError, TypeError) as exc:
        raise BadCheckpoint(f"{path}: inconsistent checkpoint ({exc})") from exc
    return params, header


# ---------------------------------------------------------------------------
# training history
# ---------------------------------------------------------------------------

def save_history(path, rows) -> None:
    scalar = ["iteration", "loss", "psnr", "elapsed", "mean_rot_deg", "mean_trans"]
    n_views = max((len(r.get("rot_err", [])) for r in rows), default=0)
    cols = [c for c in scalar if any(c in r for r in rows)]
    cols += [f"rot_err_{k}" for k in range(n_views)] + [f"trans_err_{k}" for k in range(n_views)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            flat = dict(r)
            for k, v in enumerate(r.get("rot_err", [])):
                flat[f"rot_err_{k}"] = v
            for k, v in enumerate(r.get("trans_err", [])):
                flat[f"trans_err_{k}"] = v
            w.writerow([_fmt(flat.get(c, "")) for c in cols])


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return v


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p

