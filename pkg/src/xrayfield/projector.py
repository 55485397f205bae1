"""Analytic Beer's-law forward model.

Rays are clipped to the grid bounds and integrated with the midpoint rule
over trilinearly interpolated attenuation; transmittance is
``exp(-integral)`` with unit incident intensity per channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import Aabb, LpbCamera, Ray, generate_rays, pixel_centers, project, slab_clip
from .phantom import SpectralBasis, SpectralScene, VoxelGrid, reference_color_map, voxelize


@dataclass(frozen=True)
class Bbox2:
    view: int
    cls: str
    u_min: float
    v_min: float
    u_max: float
    v_max: float
    object_id: int = -1

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError("Bbox2 needs min < max on both axes")

    def to_json(self) -> dict:
        return {"class": self.cls, "object": self.object_id, "u_min": self.u_min,
                "v_min": self.v_min, "u_max": self.u_max, "v_max": self.v_max}

    @classmethod
    def from_json(cls, d, view: int) -> "Bbox2":
        return cls(view, d["class"], d["u_min"], d["v_min"], d["u_max"], d["v_max"],
                   int(d.get("object", -1)))


@dataclass
class ProjectionImage:
    """``pixels`` is (H, W, C): RGB or per-channel transmittance in [0, 1]."""

    pixels: np.ndarray
    camera: LpbCamera
    boxes: list = field(default_factory=list)
    view: int = 0
    kind: str = "rgb"

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class Dataset:
    images: list
    s: float
    bounds: Aabb
    transmittance: list | None = None

    def __post_init__(self):
        for im in self.images:
            if im.camera.intrinsics.s != self.s:
                raise ValueError("all views must share the scan scale s")

    @property
    def cameras(self) -> list:
        return [im.camera for im in self.images]


def line_integral(grid: VoxelGrid, ray: Ray, step: float) -> np.ndarray:
    """Per-channel midpoint-rule integral of attenuation along ``ray`` through the grid."""
    return line_integrals(grid, ray.origin[None, :], ray.direction[None, :], step)[0]


def line_integrals(grid: VoxelGrid, origins, dirs, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("step must be positive")
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    tn, tf, hit, _ = slab_clip(origins, dirs, grid.bounds)
    return kernels.line_integrals(grid.data, grid.bounds.min, grid.pitch, origins, dirs,
                                  np.ascontiguousarray(tn), np.ascontiguousarray(tf), float(step))


def grid_samples(grid: VoxelGrid, origins, dirs, step: float):
    """The projector's own sample points: ``(mu (R, M, C), delta (R, M))``.

    Lets other integrators reuse exactly the points ``line_integrals`` visits.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    tn, tf, _, _ = slab_clip(origins, dirs, grid.bounds)
    t, delta, valid = kernels.midpoint_samples(tn, tf, step)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    mu = kernels.sample_trilinear(grid.data, grid.bounds.min, grid.pitch,
                                  np.ascontiguousarray(pts.reshape(-1, 3)))
    mu = mu.reshape(t.shape + (grid.channels,)) * valid[..., None]
    return mu, delta


def analytic_sphere_integral(center, radius: float, mu, ray: Ray) -> np.ndarray:
    """Exact ``mu * chord`` of a ray (unit direction) through a homogeneous sphere, for t >= 0."""
    o = np.asarray(ray.origin, dtype=float) - np.asarray(center, dtype=float)
    d = np.asarray(ray.direction, dtype=float)
    b = float(o @ d)
    c = float(o @ o) - radius * radius
    disc = b * b - c
    mu = np.asarray(mu, dtype=float)
    if disc <= 0.0:
        return np.zeros_like(mu)
    root = math.sqrt(disc)
    t0, t1 = max(-b - root, 0.0), max(-b + root, 0.0)
    return mu * (t1 - t0)


def render_transmittance(grid: VoxelGrid, cam: LpbCamera, step: float) -> np.ndarray:
    """(H, W, C) transmittance image ``exp(-line integral)``."""
    px = pixel_centers(cam.width, cam.height)
    o, d = generate_rays(cam, px)
    integ = line_integrals(grid, o.reshape(-1, 3), d.reshape(-1, 3), step)
    return np.exp(-integ).reshape(cam.height, cam.width, grid.channels)


def render_projection(grid: VoxelGrid, cam: LpbCamera, step: float) -> ProjectionImage:
    return ProjectionImage(render_transmittance(grid, cam, step), cam, kind="transmittance")


BOX_SURFACE_SAMPLES = 6000


def object_boxes(scene: SpectralScene, cam: LpbCamera, view: int, n_surface: int = BOX_SURFACE_SAMPLES) -> list:
    """Pixel-axis-aligned extents of each primitive's projected surface samples."""
    boxes = []
    for i, prim in enumerate(scene.primitives):
        uv = project(cam, prim.surface_samples(n_surface))
        lo, hi = uv.min(axis=0), uv.max(axis=0)
        boxes.append(Bbox2(view, prim.material.name, float(lo[0]), float(lo[1]),
                           float(hi[0]), float(hi[1]), i))
    return boxes


def synthesize_dataset(scene: SpectralScene, cameras, step: float | None = None,
                       noise_sigma: float = 0.0, seed=0, grid_dims=(128, 128, 128),
                       basis: SpectralBasis | None = None, keep_transmittance: bool = False) -> Dataset:
    """voxelize -> transmittance -> reference colour map -> optional noise."""
    cameras = list(cameras)
    if len(cameras) < 2:
        raise ValueError("need at least two cameras")
    basis = basis or SpectralBasis()
    grid = voxelize(scene, grid_dims, basis)
    if step is None:
        step = float(grid.pitch.min()) / 2.0
    s = cameras[0].intrinsics.s
    images, trans = [], []
    for k, cam in enumerate(cameras):
        t = render_transmittance(grid, cam, step)
        rgb = reference_color_map(t)
        if noise_sigma > 0:
            rng = np.random.default_rng([int(seed), k])
            rgb = np.clip(rgb + rng.normal(scale=noise_sigma, size=rgb.shape), 0.0, 1.0)
        images.append(ProjectionImage(rgb, cam, object_boxes(scene, cam, k), view=k))
        if keep_transmittance:
            trans.append(t)
    return Dataset(images, s, scene.bounds, trans if keep_transmittance else None)
