"""Joint optimization of the attenuation field, colour network and cameras.

The loss is the summed squared RGB error over a batch of pixels, with rays
generated from the *current* camera parameters so gradients reach the
intrinsics, the extrinsics and the shared scan scale.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import Diverged, NonFiniteGradient
from .field import ColorNet, FieldNet, ModelConfig, RenderConfig, render_rays, render_rays_backward
from .geometry import (CX, F, K1, K2, ROT, TRANS, Aabb, LpbCamera, camera_rays, camera_rays_backward,
                       rotation_angle_deg, slab_clip, slab_clip_backward)

log = logging.getLogger(__name__)

INTRINSIC_COLS = slice(F, K2 + 1)
POSE_COLS = slice(ROT.start, TRANS.stop)


@dataclass
class ParamSet:
    """Everything the optimizer may touch.

    ``cameras`` is (K, 10): ``f, cx, k1, k2, axis-angle(3), translation(3)``;
    ``s`` is a length-1 array so it can be updated in place.
    """

    field: FieldNet
    color: ColorNet
    cameras: np.ndarray
    s: np.ndarray
    image_sizes: list

    @classmethod
    def from_cameras(cls, fnet: FieldNet, cnet: ColorNet, cams) -> "ParamSet":
        cams = list(cams)
        s_vals = {c.intrinsics.s for c in cams}
        if len(s_vals) != 1:
            raise ValueError("cameras must share the scan scale s")
        return cls(fnet, cnet, np.stack([c.to_vector() for c in cams]),
                   np.array([s_vals.pop()]), [c.image_size for c in cams])

    def arrays(self) -> dict:
        out = {}
        for i, a in enumerate(self.field.mlp.params()):
            out[f"field.{i}"] = a
        for i, a in enumerate(self.color.mlp.params()):
            out[f"color.{i}"] = a
        out["cameras"] = self.cameras
        out["s"] = self.s
        return out

    def camera_list(self) -> list[LpbCamera]:
        from .geometry import LpbIntrinsics, Rigid3
        cams = []
        for vec, size in zip(self.cameras, self.image_sizes):
            intr = LpbIntrinsics(float(vec[F]), float(vec[CX]), float(self.s[0]), float(vec[K1]), float(vec[K2]))
            cams.append(LpbCamera(intr, Rigid3(vec[ROT], vec[TRANS]), tuple(size)))
        return cams

    def copy(self) -> "ParamSet":
        fnet = FieldNet(replace(self.field.encoder), self.field.mlp.astype(self.field.mlp.dtype))
        cnet = ColorNet(self.color.mlp.astype(self.color.mlp.dtype))
        return ParamSet(fnet, cnet, self.cameras.copy(), self.s.copy(), list(self.image_sizes))


@dataclass
class TrainConfig:
    iterations: int = 10000
    batch_rays: int = 512
    lr_field: float = 5e-3
    lr_color: float = 5e-3
    lr_pose: float = 5e-4
    lr_intrinsics: float = 5e-4
    lr_s: float = 0.0
    lr_decay: float = 0.1  # lr multiplier reached at the last iteration
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    c2f_start: int = 0
    c2f_end: int = 0
    optimize_pose: bool = True
    optimize_intrinsics: bool = True
    optimize_s: bool = False
    intrinsics_warmup: float = 0.2  # fraction of iterations with intrinsics frozen
    pose_warmup: float = 0.0  # fraction of iterations with poses frozen
    log_every: int = 100
    seed: int = 0
    dtype: str = "float32"
    model: ModelConfig = field(default_factory=ModelConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        for name in ("lr_field", "lr_color"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.c2f_start <= self.c2f_end <= max(self.iterations, self.c2f_end):
            raise ValueError("need 0 <= c2f_start <= c2f_end")
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.render, dict):
            self.render = RenderConfig(**self.render)

    def to_json(self) -> dict:
        d = asdict(self)
        d["render"] = self.render.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def c2f_weights(iteration: int, cfg: TrainConfig, n_bands: int) -> np.ndarray:
    """Coarse-to-fine band weights ``w_l = clamp(alpha - l, 0, 1)`` with ``alpha`` ramping 0 -> L."""
    if cfg.c2f_end > cfg.c2f_start:
        prog = min(max((iteration - cfg.c2f_start) / (cfg.c2f_end - cfg.c2f_start), 0.0), 1.0)
    else:
        prog = 1.0 if iteration >= cfg.c2f_end else 0.0
    alpha = prog * n_bands
    return np.clip(alpha - np.arange(n_bands), 0.0, 1.0)


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    views: np.ndarray
    uv: np.ndarray
    rgb: np.ndarray
    jitter: np.ndarray | None = None


def _forward(params: ParamSet, batch: Batch, render: RenderConfig, bounds: Aabb, band_weights):
    o, d, cam_cache = camera_rays(params.cameras, float(params.s[0]), batch.views, batch.uv)
    tn, tf, hit, info = slab_clip(o, d, bounds)
    rgb, rcache = render_rays(params.field, params.color, render, o, d, tn, tf,
                              batch.jitter if render.stratified else None, band_weights)
    return rgb, (cam_cache, tn, tf, info, rcache)


def predict(params: ParamSet, batch: Batch, render: RenderConfig, bounds: Aabb, band_weights=None):
    return _forward(params, batch, render, bounds, band_weights)[0]


def photometric_loss(params: ParamSet, batch: Batch, render: RenderConfig, bounds: Aabb,
                     band_weights=None) -> float:
    """Sum of squared RGB residuals over the batch."""
    if len(batch.views) == 0:
        raise ValueError("empty batch")
    rgb = predict(params, batch, render, bounds, band_weights)
    return float(np.sum((rgb - batch.rgb) ** 2, dtype=np.float64))


DEFAULT_LEARN = {"field": True, "color": True, "pose": True, "intrinsics": True, "s": False}


def backward(params: ParamSet, batch: Batch, render: RenderConfig, bounds: Aabb,
             band_weights=None, learn: dict | None = None):
    """Loss and exact gradients for every array in ``params.arrays()``.

    ``learn`` flags groups (field, color, pose, intrinsics, s); frozen groups
    get zero gradients.
    """
    learn = {**DEFAULT_LEARN, **(learn or {})}
    rgb, (cam_cache, tn, tf, info, rcache) = _forward(params, batch, render, bounds, band_weights)
    resid = rgb - batch.rgb.astype(rgb.dtype)
    loss = float(np.sum(resid.astype(np.float64) ** 2))
    if not math.isfinite(loss):
        raise NonFiniteGradient("loss is not finite")
    need_rays = learn["pose"] or learn["intrinsics"] or learn["s"]
    fg, cg, ray_g = render_rays_backward(params.field, params.color, rcache, 2.0 * resid, need_rays)

    grads = {}
    for i, g in enumerate(fg):
        grads[f"field.{i}"] = g if learn["field"] else np.zeros_like(g)
    for i, g in enumerate(cg):
        grads[f"color.{i}"] = g if learn["color"] else np.zeros_like(g)
    d_cam = np.zeros_like(params.cameras)
    d_s = 0.0
    if need_rays:
        d_o, d_d, d_tn, d_tf = (np.asarray(a, dtype=np.float64) for a in ray_g)
        co, cd = slab_clip_backward(info, tn, tf, d_tn, d_tf)
        d_cam, d_s = camera_rays_backward(cam_cache, d_o + co, d_d + cd)
        if not learn["pose"]:
            d_cam[:, POSE_COLS] = 0.0
        if not learn["intrinsics"]:
            d_cam[:, INTRINSIC_COLS] = 0.0
        if not learn["s"]:
            d_s = 0.0
    grads["cameras"] = d_cam
    grads["s"] = np.array([d_s])
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    return loss, grads, rgb


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(state: AdamState, arrays: dict, grads: dict, lrs: dict,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update.

    ``lrs`` maps each array name to a scalar or a broadcastable array of
    learning rates; a zero rate leaves the entry untouched.
    """
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, p in arrays.items():
        g = grads[name].astype(np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        lr = np.asarray(lrs[name], dtype=np.float64)
        if not np.any(lr):
            continue
        upd = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p -= upd.astype(p.dtype)


def _learning_rates(params: ParamSet, cfg: TrainConfig, learn: dict, scale: float) -> dict:
    lrs = {}
    for name in params.arrays():
        if name.startswith("field."):
            lrs[name] = cfg.lr_field * scale if learn["field"] else 0.0
        elif name.startswith("color."):
            lrs[name] = cfg.lr_color * scale if learn["color"] else 0.0
    cam = np.zeros(params.cameras.shape[1])
    if learn["intrinsics"]:
        cam[INTRINSIC_COLS] = cfg.lr_intrinsics * scale
        # f and cx are in pixels (~1e2) while k1/k2 are dimensionless: scale pixel-valued steps by f
        cam[F] *= float(np.mean(params.cameras[:, F]))
        cam[CX] *= float(np.mean(params.cameras[:, F]))
    if learn["pose"]:
        cam[POSE_COLS] = cfg.lr_pose * scale
    lrs["cameras"] = cam
    lrs["s"] = cfg.lr_s * scale if learn["s"] else 0.0
    return lrs


# ---------------------------------------------------------------------------
# pose evaluation
# ---------------------------------------------------------------------------

def camera_center(cam: LpbCamera) -> np.ndarray:
    r = cam.world_to_camera.matrix
    return -r.T @ cam.world_to_camera.translation


def pose_error(cam_est: LpbCamera, cam_gt: LpbCamera) -> tuple[float, float]:
    """(geodesic rotation error in degrees, source-position distance)."""
    rot = rotation_angle_deg(cam_est.world_to_camera.matrix, cam_gt.world_to_camera.matrix)
    return rot, float(np.linalg.norm(camera_center(cam_est) - camera_center(cam_gt)))


def align_cameras(est: list, gt: list) -> list:
    """Rigidly move the estimated rig onto the ground truth.

    Joint field/pose optimization is only defined up to a global rigid
    motion of the world; this removes that motion before measuring errors.
    """
    from .geometry import Rigid3
    q_sum = np.zeros((3, 3))
    for e, g in zip(est, gt):
        q_sum += g.world_to_camera.matrix.T @ e.world_to_camera.matrix
    u, _, vt = np.linalg.svd(q_sum)
    q = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    c_est = np.array([camera_center(e) for e in est])
    c_gt = np.array([camera_center(g) for g in gt])
    shift = np.mean(c_gt - c_est @ q.T, axis=0)
    out = []
    for e, ce in zip(est, c_est):
        r_new = e.world_to_camera.matrix @ q.T
        c_new = q @ ce + shift
        out.append(replace(e, world_to_camera=Rigid3.from_matrix(r_new, -r_new @ c_new)))
    return out


def pose_errors(est: list, gt: list, align: bool = True) -> np.ndarray:
    """(K, 2) per-view rotation (deg) and translation errors, optionally after rigid alignment."""
    if align:
        est = align_cameras(est, gt)
    return np.array([pose_error(e, g) for e, g in zip(est, gt)])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def build_params(cfg: TrainConfig, cameras) -> ParamSet:
    rng = np.random.default_rng([cfg.seed, 7919])
    dt = np.dtype(cfg.dtype)
    fnet = FieldNet.build(cfg.model, rng, dt)
    cnet = ColorNet.build(cfg.model, rng, dt)
    return ParamSet.from_cameras(fnet, cnet, cameras)


def _psnr_from_mse(mse: float) -> float:
    return math.inf if mse <= 0 else -10.0 * math.log10(mse)


def train(images, init_cameras, cfg: TrainConfig, bounds: Aabb | None = None,
          gt_cameras=None, params: ParamSet | None = None, callback=None):
    """Run the joint optimization.

    ``images`` is a list of (H, W, 3) arrays aligned with ``init_cameras``.
    Returns ``(params, history)``; ``history`` rows carry iteration, loss,
    batch PSNR and, when ``gt_cameras`` are given, aligned mean pose errors.
    """
    images = [np.asarray(im, dtype=np.float64) for im in images]
    init_cameras = list(init_cameras)
    if len(images) < 2 or len(images) != len(init_cameras):
        raise ValueError("need >= 2 views with one camera each")
    bounds = bounds or Aabb.cube()
    params = params or build_params(cfg, init_cameras)
    state = AdamState()
    dt = np.dtype(cfg.dtype)

    sizes = np.array([im.shape[0] * im.shape[1] for im in images])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat_rgb = np.concatenate([im.reshape(-1, 3) for im in images]).astype(dt)
    widths = np.array([im.shape[1] for im in images])

    history = []
    window = []
    t0 = time.time()
    for it in range(cfg.iterations):
        rng = np.random.default_rng([cfg.seed, it])
        idx = rng.integers(0, offsets[-1], cfg.batch_rays)
        views = np.searchsorted(offsets, idx, side="right") - 1
        local = idx - offsets[views]
        uv = np.stack([local % widths[views] + 0.5, local // widths[views] + 0.5], axis=1).astype(np.float64)
        jitter = rng.random((cfg.batch_rays, cfg.render.samples_per_ray)) if cfg.render.stratified else None
        batch = Batch(views, uv, flat_rgb[idx], jitter)

        learn = {"field": True, "color": True,
                 "pose": cfg.optimize_pose and it >= cfg.pose_warmup * cfg.iterations,
                 "intrinsics": cfg.optimize_intrinsics and it >= cfg.intrinsics_warmup * cfg.iterations,
                 "s": cfg.optimize_s}
        weights = c2f_weights(it, cfg, params.field.encoder.n_bands)
        loss, grads, _ = backward(params, batch, cfg.render, bounds, weights, learn)
        if not math.isfinite(loss):
            raise Diverged(f"loss became {loss} at iteration {it}")
        scale = cfg.lr_decay ** (it / max(cfg.iterations, 1))
        adam_step(state, params.arrays(), grads, _learning_rates(params, cfg, learn, scale),
                  cfg.beta1, cfg.beta2, cfg.eps)
        window.append(loss / (3 * cfg.batch_rays))

        if (it + 1) % cfg.log_every == 0 or it + 1 == cfg.iterations:
            mse = float(np.mean(window))
            row = {"iteration": it + 1, "loss": mse * 3 * cfg.batch_rays, "psnr": _psnr_from_mse(mse),
                   "elapsed": time.time() - t0}
            if gt_cameras is not None:
                errs = pose_errors(params.camera_list(), list(gt_cameras))
                row["rot_err"] = errs[:, 0].tolist()
                row["trans_err"] = errs[:, 1].tolist()
                row["mean_rot_deg"] = float(errs[:, 0].mean())
                row["mean_trans"] = float(errs[:, 1].mean())
            history.append(row)
            window = []
            log.info("iter %d loss %.5f psnr %.2f", row["iteration"], row["loss"], row["psnr"])
            if callback is not None:
                callback(params, row)
    params.field.encoder.weights = c2f_weights(cfg.iterations, cfg, params.field.encoder.n_bands)
    return params, history
