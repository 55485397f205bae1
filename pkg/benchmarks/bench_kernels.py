"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N wall time of each backend and
the speedup.  Both backends are also checked to agree on every input.
"""
import argparse
import time

import numpy as np

from xrayfield import kernels, labeler
from xrayfield import _pykernels
from xrayfield.geometry import Aabb, fan_rig, generate_rays, pixel_centers, slab_clip
from xrayfield.phantom import make_phantom, voxel_centers, voxelize
from xrayfield.projector import object_boxes


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases():
    scene = make_phantom(0, n_objects=3)
    grid = voxelize(scene, (64, 64, 64))
    lo, pitch = np.ascontiguousarray(grid.bounds.min), np.ascontiguousarray(grid.pitch)
    pts = np.random.default_rng(0).uniform(-1, 1, (200_000, 3))
    yield "sample_trilinear 200k pts", (grid.data, lo, pitch, pts), "sample_trilinear"

    cam = fan_rig(width=96, height=96)[2]
    o, d = generate_rays(cam, pixel_centers(96, 96).reshape(-1, 2))
    tn, tf, _, _ = slab_clip(o, d, grid.bounds)
    args = (grid.data, lo, pitch, np.ascontiguousarray(o), np.ascontiguousarray(d), tn, tf,
            float(pitch.min()) / 2)
    yield "line_integrals 96x96 view", args, "line_integrals"

    cams = fan_rig(n_views=9, width=64, height=64)
    boxes = [object_boxes(scene, c, k)[0] for k, c in enumerate(cams)]
    table, has = labeler._box_table(cams, boxes)
    rot, trans, intr = labeler._camera_tables(cams)
    centers = np.ascontiguousarray(voxel_centers((64, 64, 64), Aabb.cube()).reshape(-1, 3))
    yield "carve_hull 64^3, 9 views", (centers, rot, trans, intr, table, has), "carve_hull"

    allowed = (grid.data[0] > 0).astype(np.uint8)
    seed = np.argwhere(allowed)[0]
    yield "flood_fill 64^3", (allowed, *map(int, seed)), "flood_fill"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.cython_backend is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'kernel':28s} {'cython':>10s} {'python':>10s} {'speedup':>8s}")
    for name, inputs, fn in cases():
        tc, a = best_of(lambda: getattr(kernels.cython_backend, fn)(*inputs), args.repeat)
        tp, b = best_of(lambda: getattr(_pykernels, fn)(*inputs), args.repeat)
        a, b = np.asarray(a), np.asarray(b)
        if a.dtype == np.uint8 or b.dtype == bool:
            assert np.array_equal(a.astype(bool), b.astype(bool)), name
        else:
            assert np.allclose(a, b, rtol=0, atol=1e-12), name
        print(f"{name:28s} {tc * 1e3:9.1f}ms {tp * 1e3:9.1f}ms {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
