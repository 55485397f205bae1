"""Synthetic dual-energy scenes.

Materials are described by Compton and photoelectric coefficients; the
attenuation at energy ``E`` is ``a_comp * f_comp(E) + a_photo * f_photo(E)``
with a Klein-Nishina Compton basis and an ``E^-3`` photoelectric basis, both
normalized to 1 at ``E0 = 60 keV``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import hsv_to_rgb

from .errors import DomainError
from .geometry import Aabb, Rigid3

ELECTRON_REST_KEV = 510.99895
E0_KEV = 60.0


def klein_nishina(energy_kev):
    """Klein-Nishina total cross-section per electron, in units of 2πr_e²."""
    e = np.asarray(energy_kev, dtype=float) / ELECTRON_REST_KEV
    l2 = np.log1p(2.0 * e)
    return ((1.0 + e) / e**2 * (2.0 * (1.0 + e) / (1.0 + 2.0 * e) - l2 / e)
            + l2 / (2.0 * e) - (1.0 + 3.0 * e) / (1.0 + 2.0 * e) ** 2)


def f_comp(energy_kev):
    return klein_nishina(energy_kev) / klein_nishina(E0_KEV)


def f_photo(energy_kev):
    return (np.asarray(energy_kev, dtype=float) / E0_KEV) ** -3


@dataclass(frozen=True)
class SpectralBasis:
    energies: tuple = (60.0, 120.0)

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        if e.ndim != 1 or len(e) == 0 or np.any(np.diff(e) <= 0):
            raise ValueError("energies must be strictly increasing")
        object.__setattr__(self, "energies", tuple(float(x) for x in e))

    @property
    def n_spectral(self) -> int:
        return len(self.energies)

    @property
    def comp(self) -> np.ndarray:
        return f_comp(np.array(self.energies))

    @property
    def photo(self) -> np.ndarray:
        return f_photo(np.array(self.energies))


@dataclass(frozen=True)
class Material:
    name: str
    alpha_comp: float
    alpha_photo: float

    def __post_init__(self):
        if self.alpha_comp < 0 or self.alpha_photo < 0:
            raise ValueError("material coefficients must be non-negative")

    def mu(self, basis: SpectralBasis) -> np.ndarray:
        return self.alpha_comp * basis.comp + self.alpha_photo * basis.photo


def attenuation_at(m: Material, basis: SpectralBasis, j: int) -> float:
    if not 0 <= j < basis.n_spectral:
        raise IndexError(f"channel {j} out of range for {basis.n_spectral} energies")
    e = basis.energies[j]
    return float(m.alpha_comp * f_comp(e) + m.alpha_photo * f_photo(e))


PRESET_MATERIALS = {
    "organic": Material("organic", 0.55, 0.12),
    "plastic": Material("plastic", 0.42, 0.03),
    "light_metal": Material("light_metal", 0.90, 1.10),
    "heavy_metal": Material("heavy_metal", 1.20, 4.50),
}


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Primitive:
    """A solid in local coordinates placed by ``pose`` (local -> world).

    ``params``: sphere ``(radius,)``; box ``(hx, hy, hz)`` half extents;
    cylinder ``(radius, half_height)`` with its axis along local z.
    """

    shape: str
    params: tuple
    pose: Rigid3
    material: Material

    def __post_init__(self):
        expected = {"sphere": 1, "box": 3, "cylinder": 2}
        if self.shape not in expected:
            raise ValueError(f"unknown shape {self.shape!r}")
        p = tuple(float(x) for x in self.params)
        if len(p) != expected[self.shape] or any(x <= 0 for x in p):
            raise ValueError(f"bad parameters {p} for {self.shape}")
        object.__setattr__(self, "params", p)

    def to_local(self, pts) -> np.ndarray:
        r = self.pose.matrix
        return (np.asarray(pts, dtype=float) - self.pose.translation) @ r

    def contains(self, pts) -> np.ndarray:
        q = self.to_local(pts)
        p = self.params
        if self.shape == "sphere":
            return np.sum(q * q, axis=-1) <= p[0] ** 2
        if self.shape == "box":
            return np.all(np.abs(q) <= np.array(p), axis=-1)
        return (q[..., 0] ** 2 + q[..., 1] ** 2 <= p[0] ** 2) & (np.abs(q[..., 2]) <= p[1])

    def bounding_radius(self) -> float:
        p = self.params
        if self.shape == "sphere":
            return p[0]
        if self.shape == "box":
            return float(np.linalg.norm(p))
        return math.hypot(p[0], p[1])

    def world_extent(self) -> tuple[np.ndarray, np.ndarray]:
        """Tight world AABB of the primitive."""
        r = self.pose.matrix
        c = self.pose.translation
        p = self.params
        if self.shape == "sphere":
            half = np.full(3, p[0])
        elif self.shape == "box":
            half = np.abs(r) @ np.array(p)
        else:
            axis = r[:, 2]
            half = p[0] * np.sqrt(np.clip(1.0 - axis**2, 0.0, None)) + p[1] * np.abs(axis)
        return c - half, c + half

    def surface_samples(self, n: int = 4000) -> np.ndarray:
        """Deterministic surface points (world frame) covering the silhouette extremes."""
        p = self.params
        k = max(int(math.sqrt(n / 2)), 8)
        if self.shape == "sphere":
            th = np.linspace(0.0, math.pi, k)
            ph = np.linspace(0.0, 2 * math.pi, 2 * k, endpoint=False)
            tt, pp = np.meshgrid(th, ph)
            q = p[0] * np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], -1)
        elif self.shape == "box":
            g = np.linspace(-1.0, 1.0, k)
            a, b = np.meshgrid(g, g)
            faces = []
            for ax in range(3):
                for sgn in (-1.0, 1.0):
                    f = np.empty(a.shape + (3,))
                    others = [i for i in range(3) if i != ax]
                    f[..., ax] = sgn
                    f[..., others[0]] = a
                    f[..., others[1]] = b
                    faces.append(f)
            q = np.concatenate([f.reshape(-1, 3) for f in faces]) * np.array(p)
        else:
            ph = np.linspace(0.0, 2 * math.pi, 2 * k, endpoint=False)
            z = np.linspace(-p[1], p[1], k)
            pp, zz = np.meshgrid(ph, z)
            side = np.stack([p[0] * np.cos(pp), p[0] * np.sin(pp), zz], -1).reshape(-1, 3)
            rr, pc = np.meshgrid(np.linspace(0.0, p[0], k), ph)
            cap = np.stack([rr * np.cos(pc), rr * np.sin(pc), np.zeros_like(rr)], -1).reshape(-1, 3)
            top, bot = cap.copy(), cap.copy()
            top[:, 2] = p[1]
            bot[:, 2] = -p[1]
            q = np.concatenate([side, top, bot])
        return self.pose.apply(q.reshape(-1, 3))

    def to_json(self) -> dict:
        return {"shape": self.shape, "params": list(self.params),
                "axis_angle": self.pose.rotation.tolist(),
                "translation": self.pose.translation.tolist(),
                "material": {"name": self.material.name, "alpha_comp": self.material.alpha_comp,
                             "alpha_photo": self.material.alpha_photo}}

    @classmethod
    def from_json(cls, d) -> "Primitive":
        m = d["material"]
        return cls(d["shape"], tuple(d["params"]), Rigid3(d["axis_angle"], d["translation"]),
                   Material(m["name"], m["alpha_comp"], m["alpha_photo"]))


@dataclass(frozen=True)
class SpectralScene:
    primitives: tuple = ()
    bounds: Aabb = field(default_factory=Aabb.cube)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        for prim in self.primitives:
            lo, hi = prim.world_extent()
            if np.any(lo < self.bounds.min - 1e-9) or np.any(hi > self.bounds.max + 1e-9):
                raise ValueError(f"primitive {prim.shape} protrudes the scene bounds")

    def to_json(self) -> dict:
        return {"bounds": self.bounds.to_json(),
                "primitives": [p.to_json() for p in self.primitives]}

    @classmethod
    def from_json(cls, d) -> "SpectralScene":
        return cls(tuple(Primitive.from_json(p) for p in d["primitives"]), Aabb.from_json(d["bounds"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "SpectralScene":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# voxel grid
# ---------------------------------------------------------------------------

@dataclass
class VoxelGrid:
    """Per-voxel, per-channel attenuation.

    ``data`` has shape ``(channels, Nz, Ny, Nx)``; voxel ``(i, j, k)`` along
    ``(x, y, z)`` is centered at ``min + (index + 0.5) * pitch``.
    """

    data: np.ndarray
    bounds: Aabb

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise ValueError("VoxelGrid data must be (channels, Nz, Ny, Nx)")

    @property
    def dims(self) -> tuple[int, int, int]:
        c, nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def pitch(self) -> np.ndarray:
        return (self.bounds.max - self.bounds.min) / np.array(self.dims, dtype=float)

    def centers(self) -> np.ndarray:
        """Voxel centers, shape (Nz, Ny, Nx, 3) holding (x, y, z)."""
        return voxel_centers(self.dims, self.bounds)


def voxel_centers(dims, bounds: Aabb) -> np.ndarray:
    nx, ny, nz = (int(d) for d in dims)
    pitch = (bounds.max - bounds.min) / np.array([nx, ny, nz], dtype=float)
    xs = bounds.min[0] + (np.arange(nx) + 0.5) * pitch[0]
    ys = bounds.min[1] + (np.arange(ny) + 0.5) * pitch[1]
    zs = bounds.min[2] + (np.arange(nz) + 0.5) * pitch[2]
    zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
    return np.stack([xx, yy, zz], axis=-1)


def voxelize(scene: SpectralScene, dims, basis: SpectralBasis | None = None) -> VoxelGrid:
    """Sample the scene at voxel centers; later primitives overwrite earlier ones."""
    basis = basis or SpectralBasis()
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 2:
        raise ValueError("dims must be three integers >= 2")
    centers = voxel_centers(dims, scene.bounds)
    data = np.zeros((basis.n_spectral,) + centers.shape[:3])
    for prim in scene.primitives:
        inside = prim.contains(centers)
        data[:, inside] = prim.material.mu(basis)[:, None]
    return VoxelGrid(data, scene.bounds)


def object_masks(scene: SpectralScene, dims) -> list[np.ndarray]:
    """Per-primitive visible occupancy (after precedence), shape (Nz, Ny, Nx) each."""
    centers = voxel_centers(dims, scene.bounds)
    owner = np.full(centers.shape[:3], -1)
    for i, prim in enumerate(scene.primitives):
        owner[prim.contains(centers)] = i
    return [owner == i for i in range(len(scene.primitives))]


# ---------------------------------------------------------------------------
# reference colour coding
# ---------------------------------------------------------------------------

ORGANIC_HUE = 30.0 / 360.0
METAL_HUE = 225.0 / 360.0
# attenuation ratios (high/low energy) that pin the two ends of the hue ramp
METAL_RATIO = 0.15
ORGANIC_RATIO = 0.85
_RATIO_EPS = 1e-3


def reference_color_map(t) -> np.ndarray:
    """Map dual-energy transmittances ``(..., 2) = (T_lo, T_hi)`` to RGB.

    Hue follows the attenuation ratio ``log T_hi / log T_lo``: ratios near 1
    (Compton dominated, organic) render orange, low ratios (photoelectric
    dominated, metals) render blue.  Saturation grows with attenuation and
    value tracks the mean transmittance, so ``(1, 1)`` is pure white.
    """
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != 2:
        raise ValueError("the reference colour map takes two energy channels")
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("transmittance values must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        att = -np.log(np.clip(t, 1e-12, 1.0))
    ratio = (att[..., 1] + _RATIO_EPS) / (att[..., 0] + _RATIO_EPS)
    x = np.clip((ratio - METAL_RATIO) / (ORGANIC_RATIO - METAL_RATIO), 0.0, 1.0)
    hue = METAL_HUE + (ORGANIC_HUE - METAL_HUE) * x * x * (3.0 - 2.0 * x)
    sat = 1.0 - np.exp(-1.5 * att.mean(axis=-1))
    val = 0.12 + 0.88 * np.sqrt(t.mean(axis=-1))
    hsv = np.stack([hue, sat, val], axis=-1)
    return hsv_to_rgb(hsv)


# ---------------------------------------------------------------------------
# random phantoms
# ---------------------------------------------------------------------------

def _random_primitive(rng: np.random.Generator, material: Material, bounds: Aabb,
                      size_range=(0.15, 0.4)) -> Primitive:
    shape = ("sphere", "box", "cylinder")[rng.integers(3)]
    lo_s, hi_s = size_range
    if shape == "sphere":
        params = (rng.uniform(lo_s, hi_s),)
    elif shape == "box":
        params = tuple(rng.uniform(lo_s * 0.6, hi_s, size=3))
    else:
        params = (rng.uniform(lo_s * 0.6, hi_s * 0.8), rng.uniform(lo_s, hi_s))
    yaw = rng.uniform(0.0, math.pi)
    rot = np.array([0.0, 0.0, yaw])
    probe = Primitive(shape, params, Rigid3(rot, np.zeros(3)), material)
    lo, hi = probe.world_extent()
    margin = 0.05
    center = rng.uniform(bounds.min - lo + margin, bounds.max - hi - margin)
    return Primitive(shape, params, Rigid3(rot, center), material)


def make_phantom(seed, n_objects: int = 3, bounds: Aabb | None = None,
                 size_range=(0.15, 0.4), max_tries: int = 200) -> SpectralScene:
    """Random non-overlapping primitives drawn from the preset materials.

    The first four objects cycle through all presets in a seed-dependent order.
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    bounds = bounds or Aabb.cube()
    rng = np.random.default_rng(seed)
    presets = list(PRESET_MATERIALS.values())
    order = list(rng.permutation(len(presets)))
    prims: list[Primitive] = []
    for i in range(n_objects):
        mat = presets[order[i % len(presets)]] if i < len(presets) else presets[rng.integers(len(presets))]
        for _ in range(max_tries):
            cand = _random_primitive(rng, mat, bounds, size_range)
            ok = all(np.linalg.norm(cand.pose.translation - p.pose.translation)
                     > cand.bounding_radius() + p.bounding_radius() + 0.05 for p in prims)
            if ok:
                break
        else:
            raise ValueError(f"could not place object {i} without overlap in {max_tries} tries")
        prims.append(cand)
    return SpectralScene(tuple(prims), bounds)
