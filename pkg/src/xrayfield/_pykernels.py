"""Pure numpy/scipy versions of the compiled kernels in ``_ckernels``."""
from __future__ import annotations

import numpy as np
from scipy import ndimage


def _trilinear_weights(data, lo, pitch, pts):
    dims_zyx = np.array(data.shape[1:])
    n = dims_zyx[::-1]  # (nx, ny, nz)
    g = (pts - lo) / pitch - 0.5
    g = np.clip(g, 0.0, n - 1)
    i0 = np.minimum(np.floor(g).astype(np.intp), n - 2)
    fr = g - i0
    return i0, fr


def sample_trilinear(data, lo, pitch, pts):
    data = np.asarray(data, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    i0, fr = _trilinear_weights(data, np.asarray(lo), np.asarray(pitch), pts)
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = fr[:, 0], fr[:, 1], fr[:, 2]

    def at(dz, dy, dx):
        return data[:, iz + dz, iy + dy, ix + dx]

    lo_z = (at(0, 0, 0) * (1.0 - fx) + at(0, 0, 1) * fx) * (1.0 - fy) \
        + (at(0, 1, 0) * (1.0 - fx) + at(0, 1, 1) * fx) * fy
    hi_z = (at(1, 0, 0) * (1.0 - fx) + at(1, 0, 1) * fx) * (1.0 - fy) \
        + (at(1, 1, 0) * (1.0 - fx) + at(1, 1, 1) * fx) * fy
    return (lo_z * (1.0 - fz) + hi_z * fz).T.copy()


def midpoint_samples(tn, tf, step):
    """Midpoint-rule sample parameters ``(t, delta, valid)`` of shape (R, M).

    Full intervals of length ``step`` from ``tn``; the last one is truncated at ``tf``.
    """
    tn = np.asarray(tn, dtype=np.float64)
    tf = np.asarray(tf, dtype=np.float64)
    length = np.maximum(tf - tn, 0.0)
    n = np.floor(length / step).astype(np.intp)
    rem = length - n * step
    m = int(n.max()) + 1 if len(n) else 1
    k = np.arange(m)[None, :]
    full = k < n[:, None]
    last = (k == n[:, None]) & (rem[:, None] > 0.0)
    t = np.where(full, tn[:, None] + (k + 0.5) * step, tn[:, None] + n[:, None] * step + 0.5 * rem[:, None])
    delta = np.where(full, step, rem[:, None])
    valid = full | last
    return t, np.where(valid, delta, 0.0), valid


def line_integrals(data, lo, pitch, origins, dirs, tn, tf, step, chunk=2048):
    data = np.asarray(data, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    out = np.zeros((len(origins), data.shape[0]))
    for s in range(0, len(origins), chunk):
        sl = slice(s, s + chunk)
        t, delta, valid = midpoint_samples(tn[sl], tf[sl], step)
        pts = origins[sl, None, :] + t[..., None] * dirs[sl, None, :]
        mu = sample_trilinear(data, lo, pitch, pts[valid])
        acc = np.zeros(t.shape + (data.shape[0],))
        acc[valid] = mu * delta[valid][:, None]
        out[sl] = acc.sum(axis=1)
    return out


def carve_hull(pts, rot, trans, intr, boxes, has_box):
    pts = np.asarray(pts, dtype=np.float64)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    keep = np.ones(len(pts), dtype=bool)
    for k in range(len(rot)):
        if not has_box[k]:
            continue
        r, t = rot[k], trans[k]
        f, cx, s, k1, k2 = intr[k]
        zc = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]
        xc = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0]
        yc = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1]
        front = zc > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            un = xc / np.where(front, zc, 1.0)
        r2 = un * un
        u = cx + f * (un * (1.0 + k1 * r2 + k2 * (r2 * r2)))
        v = s * yc
        u0, v0, u1, v1 = boxes[k]
        keep &= front & ~((u < u0) | (u > u1) | (v < v0) | (v > v1))
    return keep


_SIX = ndimage.generate_binary_structure(3, 1)


def flood_fill(allowed, sz, sy, sx):
    allowed = np.asarray(allowed, dtype=bool).copy()
    allowed[sz, sy, sx] = True
    labels, _ = ndimage.label(allowed, structure=_SIX)
    return labels == labels[sz, sy, sx]
