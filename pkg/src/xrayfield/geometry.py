"""Linear-pushbroom (LPB) camera geometry.

The detector is a 1D array: the ``u`` axis is a perspective (fan) projection,
the ``v`` axis is orthographic and produced by the conveyor motion::

    u = distort(f * X / Z + cx)        v = s * Y

with ``(X, Y, Z)`` the camera-frame coordinates of a world point.  A camera
stores the world->camera rigid transform ``p_c = R p_w + t`` with ``R`` given
as an axis-angle vector.

Besides the object-level API (``LpbCamera``, ``project``, ``generate_ray``)
this module holds the batched, differentiable ray generator used by the
trainer (``camera_rays`` / ``camera_rays_backward``) and the slab clipper with
its backward pass.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, NonMonotonicDistortion, OutOfBounds

# camera parameter vector layout used by the optimizer
F, CX, K1, K2 = 0, 1, 2, 3
ROT = slice(4, 7)
TRANS = slice(7, 10)
N_CAM_PARAMS = 10


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------

def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix, batched over leading axes."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def _rodrigues_coeffs(theta: np.ndarray):
    """A=sin/θ, B=(1-cos)/θ², and (dA/dθ)/θ, (dB/dθ)/θ, series-safe near 0."""
    theta = np.asarray(theta, dtype=float)
    small = theta < 1e-2
    th = np.where(small, 1.0, theta)
    s, c = np.sin(th), np.cos(th)
    a = s / th
    b = (1.0 - c) / th**2
    da = (th * c - s) / th**3
    db = (th * s - 2.0 * (1.0 - c)) / th**4
    t2 = theta * theta
    a_s = 1.0 - t2 / 6.0 + t2**2 / 120.0 - t2**3 / 5040.0
    b_s = 0.5 - t2 / 24.0 + t2**2 / 720.0 - t2**3 / 40320.0
    da_s = -1.0 / 3.0 + t2 / 30.0 - t2**2 / 840.0 + t2**3 / 45360.0
    db_s = -1.0 / 12.0 + t2 / 180.0 - t2**2 / 6720.0 + t2**3 / 453600.0
    return (np.where(small, a_s, a), np.where(small, b_s, b),
            np.where(small, da_s, da), np.where(small, db_s, db))


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b, _, _ = _rodrigues_coeffs(theta)
    k = skew(w)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rotvec_to_matrix_jac(w: np.ndarray):
    """Rotation matrices and their derivatives w.r.t. the axis-angle entries.

    Returns ``(R, dR)`` with ``dR[..., i, :, :] = dR / dw_i``.
    """
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b, da, db = _rodrigues_coeffs(theta)
    k = skew(w)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    r = eye + a[..., None, None] * k + b[..., None, None] * k2
    basis = skew(np.eye(3))  # [e_i]x, shape (3, 3, 3)
    dr = np.empty(w.shape[:-1] + (3, 3, 3))
    for i in range(3):
        ei = basis[i]
        wi = w[..., i][..., None, None]
        dr[..., i, :, :] = (a[..., None, None] * ei
                            + b[..., None, None] * (ei @ k + k @ ei)
                            + da[..., None, None] * wi * k
                            + db[..., None, None] * wi * k2)
    return r, dr


def matrix_to_rotvec(r: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(r, dtype=float)).as_rotvec()


def canonical_rotvec(w) -> np.ndarray:
    """Same rotation, angle folded into [0, pi]."""
    return matrix_to_rotvec(rotvec_to_matrix(np.asarray(w, dtype=float)))


def rotation_angle_deg(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, in degrees."""
    rel = np.asarray(r_a) @ np.asarray(r_b).T
    c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    # arccos is ill-conditioned near 0; use the skew part there
    s = np.linalg.norm([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0],
                        rel[1, 0] - rel[0, 1]]) / 2.0
    return math.degrees(math.atan2(s, c))


@dataclass(frozen=True)
class Rigid3:
    """Rigid transform ``p -> R(rotation) p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Rigid3":
        return cls()

    @classmethod
    def from_matrix(cls, r, t) -> "Rigid3":
        return cls(matrix_to_rotvec(r), t)

    @property
    def matrix(self) -> np.ndarray:
        return rotvec_to_matrix(self.rotation)

    def apply(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.matrix.T + self.translation

    def compose(self, other: "Rigid3") -> "Rigid3":
        """``self ∘ other``: apply ``other`` first."""
        r1 = self.matrix
        return Rigid3.from_matrix(r1 @ other.matrix, r1 @ other.translation + self.translation)

    def inverse(self) -> "Rigid3":
        rt = self.matrix.T
        return Rigid3.from_matrix(rt, -rt @ self.translation)

    def canonical(self) -> "Rigid3":
        return Rigid3(canonical_rotvec(self.rotation), self.translation)

    def __eq__(self, other):
        if not isinstance(other, Rigid3):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    __hash__ = None


# ---------------------------------------------------------------------------
# camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LpbIntrinsics:
    f: float
    cx: float
    s: float
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not self.s > 0:
            raise ValueError(f"scan scale must be positive, got {self.s}")


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError("Aabb min must be <= max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def cube(cls, half: float = 1.0) -> "Aabb":
        return cls(np.full(3, -half), np.full(3, half))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max - self.min))

    def to_json(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_json(cls, d) -> "Aabb":
        return cls(d["min"], d["max"])

    def __eq__(self, other):
        if not isinstance(other, Aabb):
            return NotImplemented
        return np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max)

    __hash__ = None


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = math.inf

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t, dtype=float), self.direction)


@dataclass(frozen=True)
class LpbCamera:
    intrinsics: LpbIntrinsics
    world_to_camera: Rigid3
    image_size: tuple[int, int]  # (W, H)

    @property
    def width(self) -> int:
        return int(self.image_size[0])

    @property
    def height(self) -> int:
        return int(self.image_size[1])

    @property
    def center(self) -> np.ndarray:
        """Source position in world coordinates."""
        return self.world_to_camera.inverse().translation

    def to_vector(self) -> np.ndarray:
        i = self.intrinsics
        return np.concatenate([[i.f, i.cx, i.k1, i.k2], self.world_to_camera.rotation,
                               self.world_to_camera.translation])

    def with_vector(self, vec, s: float | None = None) -> "LpbCamera":
        vec = np.asarray(vec, dtype=float)
        intr = LpbIntrinsics(float(vec[F]), float(vec[CX]),
                             self.intrinsics.s if s is None else float(s),
                             float(vec[K1]), float(vec[K2]))
        return LpbCamera(intr, Rigid3(vec[ROT], vec[TRANS]), self.image_size)

    def to_json(self) -> dict:
        i, p = self.intrinsics, self.world_to_camera
        return {"f": i.f, "cx": i.cx, "s": i.s, "k1": i.k1, "k2": i.k2,
                "axis_angle": p.rotation.tolist(), "translation": p.translation.tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_json(cls, d) -> "LpbCamera":
        intr = LpbIntrinsics(d["f"], d["cx"], d["s"], d.get("k1", 0.0), d.get("k2", 0.0))
        return cls(intr, Rigid3(d["axis_angle"], d["translation"]), (int(d["width"]), int(d["height"])))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# ---------------------------------------------------------------------------
# distortion (acts on the detector u axis only)
# ---------------------------------------------------------------------------

def _distort_normalized(un, k1, k2):
    r2 = un * un
    return un * (1.0 + k1 * r2 + k2 * r2 * r2)


def apply_distortion(intr: LpbIntrinsics, u_px):
    """Radial polynomial distortion of a detector coordinate."""
    un = (np.asarray(u_px, dtype=float) - intr.cx) / intr.f
    return intr.cx + intr.f * _distort_normalized(un, intr.k1, intr.k2)


def monotonic_limit(k1: float, k2: float) -> float:
    """Largest |un| on which the distortion stays strictly increasing (inf if none).

    The derivative ``1 + 3 k1 un² + 5 k2 un⁴`` is a quadratic in ``un²``; its
    smallest positive root bounds the monotone interval.
    """
    if k2 == 0.0:
        if k1 >= 0.0:
            return math.inf
        return math.sqrt(-1.0 / (3.0 * k1))
    roots = np.roots([5.0 * k2, 3.0 * k1, 1.0])
    pos = [r.real for r in roots if abs(r.imag) < 1e-14 and r.real > 0]
    if not pos:
        return math.inf
    return math.sqrt(min(pos))


def undistort_normalized(ud, k1, k2, limit=None):
    """Invert ``un (1 + k1 un² + k2 un⁴) = ud`` elementwise.

    Newton iterations safeguarded by bisection on ``[-limit, limit]``.
    ``k1``/``k2`` may be arrays broadcasting against ``ud``.
    """
    ud = np.asarray(ud, dtype=float)
    k1 = np.broadcast_to(np.asarray(k1, dtype=float), ud.shape)
    k2 = np.broadcast_to(np.asarray(k2, dtype=float), ud.shape)
    if not np.any(k1) and not np.any(k2):
        return ud.copy()
    if limit is None:
        lim = np.array([monotonic_limit(a, b) for a, b in zip(k1.ravel(), k2.ravel())]).reshape(ud.shape)
    else:
        lim = np.broadcast_to(np.asarray(limit, dtype=float), ud.shape)
    # finite bracket: grow until it straddles ud
    hi = np.where(np.isfinite(lim), lim, np.maximum(2.0 * np.abs(ud), 1.0))
    for _ in range(200):
        grow = np.isinf(lim) & (_distort_normalized(hi, k1, k2) < np.abs(ud))
        if not grow.any():
            break
        hi = np.where(grow, 2.0 * hi, hi)
    lo = -hi
    un = np.clip(ud, lo, hi)
    for _ in range(100):
        g = _distort_normalized(un, k1, k2) - ud
        lo = np.where(g < 0, un, lo)
        hi = np.where(g > 0, un, hi)
        r2 = un * un
        dg = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2
        with np.errstate(divide="ignore", invalid="ignore"):
            step = un - g / dg
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        new = np.where(bad, 0.5 * (lo + hi), step)
        done = np.abs(new - un) <= 4e-16 * np.maximum(1.0, np.abs(un))
        un = new
        if done.all():
            break
    return un


def _check_monotone(intr: LpbIntrinsics, width: float | None, ud) -> float:
    lim = monotonic_limit(intr.k1, intr.k2)
    if math.isinf(lim):
        return lim
    reach = abs(_distort_normalized(lim, intr.k1, intr.k2))
    if width is not None:
        span = max(abs(-intr.cx / intr.f), abs((width - intr.cx) / intr.f))
    else:
        span = float(np.max(np.abs(ud))) if np.size(ud) else 0.0
    if span >= reach:
        raise NonMonotonicDistortion(
            f"distortion (k1={intr.k1}, k2={intr.k2}) folds over inside the detector range")
    return lim


def undistort(intr: LpbIntrinsics, u_px, width: float | None = None):
    """Inverse of :func:`apply_distortion` on the detector interval.

    ``width`` is the detector length in pixels; when given, monotonicity is
    checked over the whole detector rather than just the queried values.
    """
    ud = (np.asarray(u_px, dtype=float) - intr.cx) / intr.f
    lim = _check_monotone(intr, width, ud)
    un = undistort_normalized(ud, intr.k1, intr.k2, limit=lim)
    return intr.cx + intr.f * un


# ---------------------------------------------------------------------------
# projection and rays
# ---------------------------------------------------------------------------

def to_camera(cam: LpbCamera, p) -> np.ndarray:
    """World points to camera frame, elementwise (no BLAS) so results are reproducible bit-for-bit."""
    p = np.asarray(p, dtype=float)
    r = cam.world_to_camera.matrix
    t = cam.world_to_camera.translation
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return np.stack([r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0],
                     r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1],
                     r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]], axis=-1)


def project_points(cam: LpbCamera, p):
    """Batched projection; returns ``(uv, valid)`` where invalid means Z <= 0."""
    pc = to_camera(cam, p)
    z = pc[..., 2]
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        un = pc[..., 0] / np.where(valid, z, 1.0)
    i = cam.intrinsics
    u = i.cx + i.f * (un * (1.0 + i.k1 * (un * un) + i.k2 * ((un * un) * (un * un))))
    v = i.s * pc[..., 1]
    return np.stack([u, v], axis=-1), valid


def project(cam: LpbCamera, p) -> np.ndarray:
    """Project world point(s) to pixel coordinates ``(u, v)``.

    Raises :class:`BehindCamera` if any point has camera-frame Z <= 0.
    """
    uv, valid = project_points(cam, p)
    if not np.all(valid):
        raise BehindCamera("point lies behind the source plane (Z <= 0)")
    return uv


def generate_rays(cam: LpbCamera, px, check_bounds: bool = True):
    """Rays through pixel coordinates ``px`` (..., 2); returns ``(origins, directions)``."""
    px = np.asarray(px, dtype=float)
    if check_bounds:
        u, v = px[..., 0], px[..., 1]
        if np.any((u < 0) | (u > cam.width) | (v < 0) | (v > cam.height)):
            raise OutOfBounds("pixel outside the image")
        _check_monotone(cam.intrinsics, cam.width, None)
    flat = px.reshape(-1, 2)
    params = cam.to_vector()[None, :]
    o, d, _ = camera_rays(params, cam.intrinsics.s, np.zeros(len(flat), dtype=np.intp), flat)
    return o.reshape(px.shape[:-1] + (3,)), d.reshape(px.shape[:-1] + (3,))


def generate_ray(cam: LpbCamera, px) -> Ray:
    o, d = generate_rays(cam, np.asarray(px, dtype=float).reshape(2))
    return Ray(o, d)


def pixel_centers(width: int, height: int) -> np.ndarray:
    """(H, W, 2) grid of pixel-center coordinates ``(u, v)``."""
    u = np.arange(width) + 0.5
    v = np.arange(height) + 0.5
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def camera_rays(params: np.ndarray, s: float, views: np.ndarray, uv: np.ndarray):
    """Differentiable batched ray generation.

    ``params`` is (K, 10) in the layout ``f, cx, k1, k2, axis-angle, translation``;
    ``views`` selects a camera per ray.  Returns world ``origins``, unit
    ``directions`` and a cache for :func:`camera_rays_backward`.

    In the camera frame the origin is ``(0, v/s, 0)`` and the direction is
    proportional to ``(un, 0, 1)``.
    """
    params = np.asarray(params, dtype=float)
    uv = np.asarray(uv, dtype=float)
    views = np.asarray(views, dtype=np.intp)
    p = params[views]
    f, cx, k1, k2 = p[:, F], p[:, CX], p[:, K1], p[:, K2]
    ud = (uv[:, 0] - cx) / f
    lims = np.array([monotonic_limit(a, b) for a, b in params[:, K1:K2 + 1]])[views] \
        if (np.any(params[:, K1]) or np.any(params[:, K2])) else None
    un = undistort_normalized(ud, k1, k2, limit=lims)
    norm = np.sqrt(un * un + 1.0)
    chat = np.stack([un / norm, np.zeros_like(un), 1.0 / norm], axis=1)
    oc = np.stack([np.zeros_like(un), uv[:, 1] / s, np.zeros_like(un)], axis=1)
    rmat, drmat = rotvec_to_matrix_jac(params[:, ROT])
    rv = rmat[views]
    a = oc - p[:, TRANS]
    origins = np.einsum("bji,bj->bi", rv, a)
    dirs = np.einsum("bji,bj->bi", rv, chat)
    cache = dict(params=params, s=float(s), views=views, uv=uv, ud=ud, un=un, norm=norm,
                 chat=chat, a=a, rv=rv, drmat=drmat, k1=k1, k2=k2, f=f)
    return origins, dirs, cache


def camera_rays_backward(cache, d_origins, d_dirs):
    """Gradients of a scalar w.r.t. camera params (K, 10) and ``s``."""
    d_origins = np.asarray(d_origins, dtype=float)
    d_dirs = np.asarray(d_dirs, dtype=float)
    views, rv, a, chat = cache["views"], cache["rv"], cache["a"], cache["chat"]
    un, norm, f, ud = cache["un"], cache["norm"], cache["f"], cache["ud"]
    k1, k2 = cache["k1"], cache["k2"]
    n_cams = cache["params"].shape[0]

    # origin = R^T a, direction = R^T chat
    d_r = a[:, :, None] * d_origins[:, None, :] + chat[:, :, None] * d_dirs[:, None, :]
    d_a = np.einsum("bij,bj->bi", rv, d_origins)
    d_chat = np.einsum("bij,bj->bi", rv, d_dirs)

    grad = np.zeros((n_cams, N_CAM_PARAMS))
    d_rk = np.zeros((n_cams, 3, 3))
    np.add.at(d_rk, views, d_r)
    grad[:, ROT] = np.einsum("kij,kmij->km", d_rk, cache["drmat"])
    np.add.at(grad[:, TRANS], views, -d_a)

    s = cache["s"]
    d_s = float(np.sum(d_a[:, 1] * (-cache["uv"][:, 1] / s**2)))

    proj = np.sum(chat * d_chat, axis=1)
    d_un = (d_chat[:, 0] - chat[:, 0] * proj) / norm
    r2 = un * un
    dp = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2
    d_ud = d_un / dp
    cols = np.stack([-d_ud * ud / f, -d_ud / f, -d_un * un**3 / dp, -d_un * un**5 / dp], axis=1)
    np.add.at(grad[:, :4], views, cols)
    return grad, d_s


# ---------------------------------------------------------------------------
# ray / box clipping
# ---------------------------------------------------------------------------

def slab_clip(origins, dirs, box: Aabb):
    """Vectorized slab clip against ``box``, clamped to t >= 0.

    Returns ``(t_near, t_far, hit, info)``; ``info`` records which slab
    bound is active at each end, for :func:`slab_clip_backward`.
    """
    o = np.asarray(origins, dtype=float)
    d = np.asarray(dirs, dtype=float)
    lo, hi = box.min, box.max
    par = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.where(par, 1.0, d)
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    ax_n = np.argmax(tmin, axis=-1)
    ax_f = np.argmin(tmax, axis=-1)
    idx = np.arange(o.shape[0])
    tn_raw = tmin[idx, ax_n]
    tf = tmax[idx, ax_f]
    clamped = tn_raw < 0.0
    tn = np.where(clamped, 0.0, tn_raw)
    hit = (tf >= tn) & np.isfinite(tf)
    tn = np.where(hit, tn, 0.0)
    tf = np.where(hit, tf, 0.0)
    info = dict(ax_n=ax_n, ax_f=ax_f, clamped=clamped, hit=hit, d=d)
    return tn, tf, hit, info


def slab_clip_backward(info, tn, tf, d_tn, d_tf):
    """Back-propagate gradients on (t_near, t_far) to ray origins and directions.

    On the active slab ``t = (b - o_k) / d_k``.
    """
    d = info["d"]
    n = d.shape[0]
    idx = np.arange(n)
    d_o = np.zeros((n, 3))
    d_d = np.zeros((n, 3))
    hit = info["hit"]
    gn = np.where(hit & ~info["clamped"], d_tn, 0.0)
    gf = np.where(hit, d_tf, 0.0)
    an, af = info["ax_n"], info["ax_f"]
    with np.errstate(divide="ignore", invalid="ignore"):
        dn = np.where(gn != 0, d[idx, an], 1.0)
        df = np.where(gf != 0, d[idx, af], 1.0)
        np.add.at(d_o, (idx, an), -gn / dn)
        np.add.at(d_d, (idx, an), -gn * tn / dn)
        np.add.at(d_o, (idx, af), -gf / df)
        np.add.at(d_d, (idx, af), -gf * tf / df)
    return d_o, d_d


def ray_aabb_clip(ray: Ray, box: Aabb):
    """Intersection interval ``(t_near, t_far)`` of a ray with a box, or ``None`` on a miss."""
    tn, tf, hit, _ = slab_clip(ray.origin[None, :], ray.direction[None, :], box)
    if not hit[0]:
        return None
    return float(tn[0]), float(tf[0])


# ---------------------------------------------------------------------------
# pose perturbation and rig construction
# ---------------------------------------------------------------------------

def _random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def perturb_pose(cam: LpbCamera, rot_deg: float, trans_frac: float, seed,
                 scene_diagonal: float = 2.0 * math.sqrt(3.0)) -> LpbCamera:
    """Rotate the camera about its source position by ``rot_deg`` around a random
    axis, then move the source by a random vector of length ``trans_frac * scene_diagonal``."""
    if rot_deg < 0 or trans_frac < 0:
        raise ValueError("perturbation magnitudes must be non-negative")
    if rot_deg == 0 and trans_frac == 0:
        return cam
    rng = np.random.default_rng(seed)
    axis = _random_unit(rng)
    offset = _random_unit(rng) * (trans_frac * scene_diagonal)
    r = cam.world_to_camera.matrix
    center = -r.T @ cam.world_to_camera.translation
    r_new = rotvec_to_matrix(axis * math.radians(rot_deg)) @ r
    c_new = center + offset
    pose = Rigid3.from_matrix(r_new, -r_new @ c_new)
    return replace(cam, world_to_camera=pose)


def fan_rig(n_views: int = 9, spacing_deg: float = 40.0, start_deg: float = 0.0,
            width: int = 128, height: int = 128, distance: float = 4.0,
            half_fov: float | None = None, v_extent: float = 1.25,
            k1: float = 0.0, k2: float = 0.0) -> list[LpbCamera]:
    """Cameras spaced around the conveyor (world y) axis.

    Each source sits ``distance`` from the axis looking at it; the detector
    fan covers the [-1,1]³ scene with a small margin and the scan direction
    spans ``[-v_extent, v_extent]`` in world y.
    """
    if half_fov is None:
        r = math.sqrt(2.0) * 1.05
        half_fov = math.atan(r / math.sqrt(distance**2 - r**2))
    f = (width / 2.0) / math.tan(half_fov)
    s = height / (2.0 * v_extent)
    cams = []
    for k in range(n_views):
        ang = math.radians(start_deg + k * spacing_deg)
        pose = Rigid3(np.array([0.0, ang, 0.0]), np.array([0.0, v_extent, distance]))
        cams.append(LpbCamera(LpbIntrinsics(f, width / 2.0, s, k1, k2), pose, (width, height)))
    return cams
