"""Pipeline glue: novel-view rendering, voxel export, evaluation and the gradient check."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import BadCheckpoint
from .field import ModelConfig, RenderConfig, field_forward, render_rays
from .geometry import Aabb, LpbCamera, LpbIntrinsics, fan_rig, generate_rays, pixel_centers, slab_clip
from .metrics import image_metrics, mean_psnr
from .phantom import VoxelGrid, voxel_centers
from . import storage, trainer

RENDER_CHUNK = 8192
EXPORT_CHUNK = 1 << 16


def _open(checkpoint):
    """Accept a path or an already loaded ``(params, header)`` pair."""
    if isinstance(checkpoint, tuple):
        return checkpoint
    return storage.load_checkpoint(checkpoint)


def resize_camera(cam: LpbCamera, size) -> LpbCamera:
    """Same viewing geometry sampled on a ``(width, height)`` detector."""
    w, h = (int(x) for x in size)
    if (w, h) == cam.image_size:
        return cam
    sx, sy = w / cam.width, h / cam.height
    i = cam.intrinsics
    return replace(cam, intrinsics=LpbIntrinsics(i.f * sx, i.cx * sx, i.s * sy, i.k1, i.k2), image_size=(w, h))


def render_image(params, cam: LpbCamera, bounds: Aabb, render: RenderConfig) -> np.ndarray:
    """Deterministic full-frame render, (H, W, 3)."""
    render = replace(render, stratified=False)
    px = pixel_centers(cam.width, cam.height).reshape(-1, 2)
    o, d = generate_rays(cam, px)
    tn, tf, _, _ = slab_clip(o, d, bounds)
    out = np.empty((len(px), 3))
    for s in range(0, len(px), RENDER_CHUNK):
        sl = slice(s, s + RENDER_CHUNK)
        out[sl] = render_rays(params.field, params.color, render, o[sl], d[sl], tn[sl], tf[sl])[0]
    return out.reshape(cam.height, cam.width, 3)


def render_novel_views(checkpoint, cameras, size=None, samples_per_ray: int | None = None) -> list:
    """Render each camera (optionally resampled to ``size = (W, H)``) from a checkpoint."""
    params, header = _open(checkpoint)
    try:
        render = RenderConfig(**header["render"])
        bounds = Aabb.from_json(header["bounds"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BadCheckpoint(f"checkpoint header lacks render settings ({exc})") from exc
    if samples_per_ray is not None:
        render = replace(render, samples_per_ray=int(samples_per_ray))
    frames = []
    for cam in cameras:
        if size is not None:
            cam = resize_camera(cam, size)
        frames.append(render_image(params, cam, bounds, render))
    return frames


def export_voxels(checkpoint, dims) -> VoxelGrid:
    """Sample the attenuation field at voxel centers of the scene bounds."""
    params, header = _open(checkpoint)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 2:
        raise ValueError("dims must be three integers >= 2")
    try:
        bounds = Aabb.from_json(header["bounds"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BadCheckpoint(f"checkpoint header lacks bounds ({exc})") from exc
    centers = voxel_centers(dims, bounds)
    flat = centers.reshape(-1, 3)
    mu = np.empty((len(flat), params.field.n_spectral))
    for s in range(0, len(flat), EXPORT_CHUNK):
        mu[s:s + EXPORT_CHUNK] = field_forward(params.field, flat[s:s + EXPORT_CHUNK])
    nx, ny, nz = dims
    return VoxelGrid(np.moveaxis(mu.reshape(nz, ny, nx, -1), -1, 0), bounds)


def orbit_cameras(checkpoint_cameras, n_views: int, start_deg: float = 20.0, spacing_deg: float = 40.0):
    """Fan-rig cameras sharing the intrinsics of the first checkpoint camera."""
    ref = checkpoint_cameras[0]
    rig = fan_rig(n_views=n_views, spacing_deg=spacing_deg, start_deg=start_deg,
                  width=ref.width, height=ref.height)
    return [replace(c, intrinsics=ref.intrinsics) for c in rig]


def evaluate_images(preds, refs, views=None) -> dict:
    """Per-view and mean PSNR/SSIM on 8-bit quantized images."""
    if len(preds) != len(refs):
        raise ValueError(f"{len(preds)} predictions for {len(refs)} references")
    views = list(range(len(preds))) if views is None else list(views)
    per = []
    for v, a, b in zip(views, preds, refs):
        p, s = image_metrics(a, b)
        per.append({"view": v, "psnr": p, "ssim": s})
    return {"per_view": per, "mean_psnr": mean_psnr(r["psnr"] for r in per),
            "mean_ssim": float(np.mean([r["ssim"] for r in per])) if per else float("nan")}


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

def gradient_check(seed: int = 0, h: float = 1e-4, n_rays: int = 4, samples: int = 16,
                   floor: float = 1e-6) -> dict:
    """Compare every analytic gradient entry against central differences in float64.

    Tiny fixture: two distorted cameras, a 2x8 field, a 1x8 colour network,
    partially open frequency bands and a learnable scan scale.  Returns the
    worst relative error per parameter group.
    """
    cams = fan_rig(n_views=2, width=16, height=16, k1=0.03, k2=-0.01)
    model = ModelConfig(n_spectral=3, n_bands=2, field_hidden=2, field_width=8,
                        color_hidden=1, color_width=8, field_out_bias=0.0)
    cfg = trainer.TrainConfig(model=model, dtype="float64", seed=seed)
    params = trainer.build_params(cfg, cams)
    rng = np.random.default_rng([seed, 1])
    batch = trainer.Batch(np.arange(n_rays) % 2, rng.uniform(4, 12, (n_rays, 2)), rng.uniform(0, 1, (n_rays, 3)))
    render = RenderConfig(samples_per_ray=samples, stratified=False)
    bounds = Aabb.cube()
    bands = np.array([1.0, 0.6])
    _, grads, _ = trainer.backward(params, batch, render, bounds, bands, {"s": True})

    worst: dict = {}
    for name, arr in params.arrays().items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        err = 0.0
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = trainer.photometric_loss(params, batch, render, bounds, bands)
            flat[i] = old - h
            lm = trainer.photometric_loss(params, batch, render, bounds, bands)
            flat[i] = old
            num = (lp - lm) / (2 * h)
            err = max(err, abs(num - g[i]) / max(abs(num), abs(g[i]), floor))
        worst[name] = err
    return worst
