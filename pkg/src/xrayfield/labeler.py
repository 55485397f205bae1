"""3D labels from 2D boxes: visual hull carving, region growing, yaw cuboids.

The vertical axis is world z (objects rest on the conveyor plane), so a
cuboid is a rectangle in the x-y plane with a z extent.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import Degenerate, EmptyHull, EmptyMask
from .geometry import Aabb
from .phantom import VoxelGrid, voxel_centers
from .projector import Bbox2

HALF_PI = 0.5 * math.pi


@dataclass
class OccupancyMask:
    """Boolean occupancy over a voxel grid; ``bits`` is (Nz, Ny, Nx)."""

    bits: np.ndarray
    bounds: Aabb

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=bool)
        if self.bits.ndim != 3:
            raise ValueError("mask bits must be (Nz, Ny, Nx)")

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.bits.shape
        return nx, ny, nz

    @property
    def pitch(self) -> np.ndarray:
        return (self.bounds.max - self.bounds.min) / np.array(self.dims, dtype=float)

    def count(self) -> int:
        return int(self.bits.sum())

    def to_grid(self) -> VoxelGrid:
        return VoxelGrid(self.bits[None].astype(np.float64), self.bounds)

    @classmethod
    def from_grid(cls, grid: VoxelGrid) -> "OccupancyMask":
        if grid.channels != 1:
            raise ValueError("mask grids have exactly one channel")
        return cls(grid.data[0] > 0.5, grid.bounds)


@dataclass(frozen=True)
class Cuboid:
    center: np.ndarray
    yaw: float
    extents: np.ndarray
    cls: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "extents", np.asarray(self.extents, dtype=float).reshape(3))
        if not np.all(self.extents > 0):
            raise ValueError("cuboid extents must be positive")
        if not 0.0 <= self.yaw < HALF_PI:
            raise ValueError("cuboid yaw must lie in [0, pi/2)")

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hx, hy, hz = self.extents / 2
        local = np.array([[sx * hx, sy * hy, sz * hz]
                          for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)])
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return local @ rot.T + self.center

    def contains(self, pts, inflate=0.0) -> np.ndarray:
        """``inflate`` is a scalar or per-axis margin added to each half extent."""
        d = np.asarray(pts, dtype=float) - self.center
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1], d[..., 2]], axis=-1)
        return np.all(np.abs(local) <= self.extents / 2 + inflate, axis=-1)

    def to_json(self) -> dict:
        return {"class": self.cls, "center": [float(x) for x in self.center],
                "yaw": float(self.yaw), "extents": [float(x) for x in self.extents]}

    @classmethod
    def from_json(cls, d) -> "Cuboid":
        return cls(d["center"], d["yaw"], d["extents"], d.get("class", ""))


def save_cuboids(path, cuboids) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_json() for c in cuboids], fh, indent=2)


def load_cuboids(path) -> list:
    with open(path) as fh:
        return [Cuboid.from_json(d) for d in json.load(fh)]


# ---------------------------------------------------------------------------
# visual hull
# ---------------------------------------------------------------------------

def _box_table(cameras, boxes):
    k = len(cameras)
    table = np.zeros((k, 4))
    has = np.zeros(k, dtype=np.uint8)
    for b in boxes:
        if b is None:
            continue
        if not 0 <= b.view < k:
            raise ValueError(f"box refers to view {b.view}, only {k} cameras given")
        if has[b.view]:
            raise ValueError(f"view {b.view} has more than one box for this object")
        table[b.view] = (b.u_min, b.v_min, b.u_max, b.v_max)
        has[b.view] = 1
    return table, has


def _camera_tables(cameras):
    rot = np.stack([c.world_to_camera.matrix for c in cameras])
    trans = np.stack([c.world_to_camera.translation for c in cameras])
    intr = np.array([[c.intrinsics.f, c.intrinsics.cx, c.intrinsics.s, c.intrinsics.k1, c.intrinsics.k2]
                     for c in cameras])
    return rot, trans, intr


def visual_hull(dims, cameras, boxes, bounds: Aabb | None = None) -> OccupancyMask:
    """Keep a voxel center iff it projects inside the object's box in every view that has one.

    ``boxes`` holds ``Bbox2`` values whose ``view`` indexes ``cameras``.  A
    voxel behind a camera that has a box is excluded.
    """
    cameras = list(cameras)
    if not cameras:
        raise ValueError("need at least one camera")
    bounds = bounds or Aabb.cube()
    centers = voxel_centers(dims, bounds)
    table, has = _box_table(cameras, boxes)
    rot, trans, intr = _camera_tables(cameras)
    keep = kernels.carve_hull(np.ascontiguousarray(centers.reshape(-1, 3)), rot, trans, intr, table, has)
    return OccupancyMask(np.asarray(keep, dtype=bool).reshape(centers.shape[:3]), bounds)


# ---------------------------------------------------------------------------
# region growing
# ---------------------------------------------------------------------------

def default_tau(density: np.ndarray, hull: OccupancyMask) -> float:
    """Half the 99th-percentile density inside the hull."""
    vals = np.asarray(density)[hull.bits]
    if vals.size == 0:
        raise EmptyHull("hull has no voxels")
    return 0.5 * float(np.percentile(vals, 99))


def region_grow(density, hull: OccupancyMask, tau: float | None = None) -> OccupancyMask:
    """6-connected flood fill from the densest hull voxel over ``density >= tau`` within the hull."""
    density = np.asarray(density, dtype=np.float64)
    if density.shape != hull.bits.shape:
        raise ValueError(f"density shape {density.shape} != hull shape {hull.bits.shape}")
    if not hull.bits.any():
        raise EmptyHull("hull has no voxels")
    if tau is None:
        tau = default_tau(density, hull)
    if tau < 0:
        raise ValueError("tau must be >= 0")
    masked = np.where(hull.bits, density, -np.inf)
    seed = np.unravel_index(int(np.argmax(masked)), density.shape)
    allowed = np.ascontiguousarray(hull.bits & (density >= tau), dtype=np.uint8)
    grown = kernels.flood_fill(allowed, int(seed[0]), int(seed[1]), int(seed[2]))
    return OccupancyMask(np.asarray(grown, dtype=bool), hull.bounds)


# ---------------------------------------------------------------------------
# minimum-area rectangle
# ---------------------------------------------------------------------------

def convex_hull_2d(points) -> np.ndarray:
    """Counter-clockwise monotone-chain hull without collinear vertices."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _canonical(theta: float, ext_a: float, ext_b: float):
    """Map an edge angle to yaw in [0, pi/2), swapping extents when needed."""
    quarter = math.floor(theta / HALF_PI)
    yaw = theta - quarter * HALF_PI
    if quarter % 2:
        ext_a, ext_b = ext_b, ext_a
    if yaw >= HALF_PI - 1e-12:
        yaw, ext_a, ext_b = 0.0, ext_b, ext_a
    return max(yaw, 0.0), ext_a, ext_b


def _segment_rect(pts):
    """Zero-width rectangle along the longest span of (near-)collinear points."""
    if len(pts) == 1:
        return pts[0].copy(), 0.0, np.zeros(2)
    d = pts[-1] - pts[0]
    length = float(np.hypot(d[0], d[1]))
    yaw, a, b = _canonical(math.atan2(d[1], d[0]) % math.pi, length, 0.0)
    return 0.5 * (pts[0] + pts[-1]), yaw, np.array([a, b])


def min_area_rect(points):
    """Minimum-area enclosing rectangle by rotating calipers.

    Returns ``(center (2,), yaw, extents (2,))``: ``extents[0]`` runs along the
    direction ``yaw`` and ``extents[1]`` perpendicular to it.  Equal-area
    candidates resolve to the smallest yaw.  Collinear input warns
    ``Degenerate`` and yields a zero-width rectangle along the segment.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("min_area_rect needs at least one point")
    hull = convex_hull_2d(pts)
    if len(hull) < 3:
        warnings.warn("collinear input, returning a zero-width rectangle", Degenerate, stacklevel=2)
        return _segment_rect(hull)
    m = len(hull)
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    dirs = edges / lengths[:, None]

    best = None
    j = k = l = 0
    for i in range(m):
        e = dirs[i]
        n = np.array([-e[1], e[0]])  # inward normal of a CCW hull
        if i == 0:
            k = 0
        while (hull[(k + 1) % m] - hull[k]) @ e > 0:
            k = (k + 1) % m
        if i == 0:
            j = k
        while (hull[(j + 1) % m] - hull[j]) @ n > 0:
            j = (j + 1) % m
        if i == 0:
            l = j
        while (hull[(l + 1) % m] - hull[l]) @ e < 0:
            l = (l + 1) % m
        e_hi, e_lo = hull[k] @ e, hull[l] @ e
        n_lo, n_hi = hull[i] @ n, hull[j] @ n
        area = (e_hi - e_lo) * (n_hi - n_lo)
        center = e * (0.5 * (e_hi + e_lo)) + n * (0.5 * (n_hi + n_lo))
        yaw, ext_a, ext_b = _canonical(math.atan2(e[1], e[0]) % (2 * math.pi), e_hi - e_lo, n_hi - n_lo)
        cand = (area, yaw, center, np.array([ext_a, ext_b]))
        if best is None:
            best = cand
            continue
        tol = 1e-12 * max(best[0], 1e-300)
        if area < best[0] - tol or (abs(area - best[0]) <= tol and yaw < best[1]):
            best = cand
    _, yaw, center, ext = best
    return center, yaw, ext


# ---------------------------------------------------------------------------
# cuboids
# ---------------------------------------------------------------------------

def cuboid_from_mask(mask: OccupancyMask, cls: str = "") -> Cuboid:
    """Yaw cuboid enclosing every occupied voxel (as a cube of one pitch)."""
    if not mask.bits.any():
        raise EmptyMask("mask has no occupied voxels")
    pitch = mask.pitch
    centers = voxel_centers(mask.dims, mask.bounds)[mask.bits]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", Degenerate)
        c2, yaw, ext2 = min_area_rect(centers[:, :2])
    c, s = math.cos(yaw), math.sin(yaw)
    # a voxel's footprint seen along each rectangle axis
    grow = np.array([abs(c) * pitch[0] + abs(s) * pitch[1], abs(s) * pitch[0] + abs(c) * pitch[1]])
    z_lo, z_hi = centers[:, 2].min(), centers[:, 2].max()
    center = np.array([c2[0], c2[1], 0.5 * (z_lo + z_hi)])
    extents = np.array([ext2[0] + grow[0], ext2[1] + grow[1], z_hi - z_lo + pitch[2]])
    return Cuboid(center, yaw, extents, cls)


# ---------------------------------------------------------------------------
# whole-scene labelling
# ---------------------------------------------------------------------------

def density_from_field(mu: np.ndarray) -> np.ndarray:
    """Scalar density: L2 norm over the channel axis (first axis of a (C, ...) array)."""
    mu = np.asarray(mu, dtype=np.float64)
    return np.sqrt(np.sum(mu * mu, axis=0))


def group_boxes(images) -> dict:
    """Boxes of all images keyed by object id, each box tagged with its view index."""
    groups: dict = {}
    for k, im in enumerate(images):
        for b in im.boxes:
            key = b.object_id if b.object_id >= 0 else b.cls
            groups.setdefault(key, []).append(
                Bbox2(k, b.cls, b.u_min, b.v_min, b.u_max, b.v_max, b.object_id))
    return groups


def label_objects(density, cameras, groups: dict, bounds: Aabb, tau: float | None = None) -> list:
    """One cuboid per box group: hull -> region grow -> cuboid."""
    density = np.asarray(density)
    nz, ny, nx = density.shape
    out = []
    for key in sorted(groups, key=str):
        boxes = groups[key]
        hull = visual_hull((nx, ny, nz), cameras, boxes, bounds)
        region = region_grow(density, hull, tau)
        out.append(cuboid_from_mask(region, boxes[0].cls))
    return out
