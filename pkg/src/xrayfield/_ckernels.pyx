# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: trilinear ray marching, hull carving, 6-connected flood fill.

Each function mirrors one in ``_pykernels`` and returns the same values
(summation order may differ in the last ulp for ``line_integrals``).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline void _trilinear(const double[:, :, :, ::1] data, double gx, double gy, double gz,
                            double* out) noexcept nogil:
    cdef Py_ssize_t nc = data.shape[0], nz = data.shape[1], ny = data.shape[2], nx = data.shape[3]
    cdef Py_ssize_t ix, iy, iz, c
    cdef double fx, fy, fz, v
    if gx < 0.0: gx = 0.0
    if gx > nx - 1: gx = nx - 1
    if gy < 0.0: gy = 0.0
    if gy > ny - 1: gy = ny - 1
    if gz < 0.0: gz = 0.0
    if gz > nz - 1: gz = nz - 1
    ix = <Py_ssize_t>floor(gx)
    iy = <Py_ssize_t>floor(gy)
    iz = <Py_ssize_t>floor(gz)
    if ix > nx - 2: ix = nx - 2
    if iy > ny - 2: iy = ny - 2
    if iz > nz - 2: iz = nz - 2
    fx = gx - ix
    fy = gy - iy
    fz = gz - iz
    for c in range(nc):
        v = (data[c, iz, iy, ix] * (1.0 - fx) + data[c, iz, iy, ix + 1] * fx) * (1.0 - fy) \
            + (data[c, iz, iy + 1, ix] * (1.0 - fx) + data[c, iz, iy + 1, ix + 1] * fx) * fy
        v = v * (1.0 - fz) + ((data[c, iz + 1, iy, ix] * (1.0 - fx) + data[c, iz + 1, iy, ix + 1] * fx) * (1.0 - fy)
                              + (data[c, iz + 1, iy + 1, ix] * (1.0 - fx) + data[c, iz + 1, iy + 1, ix + 1] * fx) * fy) * fz
        out[c] = v


def sample_trilinear(const double[:, :, :, ::1] data, const double[::1] lo, const double[::1] pitch,
                     const double[:, ::1] pts):
    cdef Py_ssize_t m = pts.shape[0], nc = data.shape[0], i
    out = np.zeros((m, nc), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            _trilinear(data, (pts[i, 0] - lo[0]) / pitch[0] - 0.5, (pts[i, 1] - lo[1]) / pitch[1] - 0.5,
                       (pts[i, 2] - lo[2]) / pitch[2] - 0.5, &o[i, 0])
    return out


def line_integrals(const double[:, :, :, ::1] data, const double[::1] lo, const double[::1] pitch,
                   const double[:, ::1] origins, const double[:, ::1] dirs,
                   const double[::1] tn, const double[::1] tf, double step):
    """Midpoint-rule integrals of every channel along each ray segment [tn, tf]."""
    cdef Py_ssize_t r = origins.shape[0], nc = data.shape[0], i, k, c, n
    cdef double length, rem, t, dt
    out = np.zeros((r, nc), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] buf = np.zeros(nc, dtype=np.float64)
    with nogil:
        for i in range(r):
            length = tf[i] - tn[i]
            if length <= 0.0:
                continue
            n = <Py_ssize_t>floor(length / step)
            rem = length - n * step
            for k in range(n + 1):
                if k < n:
                    t = tn[i] + (k + 0.5) * step
                    dt = step
                else:
                    if rem <= 0.0:
                        break
                    t = tn[i] + n * step + 0.5 * rem
                    dt = rem
                _trilinear(data,
                           (origins[i, 0] + t * dirs[i, 0] - lo[0]) / pitch[0] - 0.5,
                           (origins[i, 1] + t * dirs[i, 1] - lo[1]) / pitch[1] - 0.5,
                           (origins[i, 2] + t * dirs[i, 2] - lo[2]) / pitch[2] - 0.5, &buf[0])
                for c in range(nc):
                    o[i, c] += buf[c] * dt
    return out


def carve_hull(const double[:, ::1] pts, const double[:, :, ::1] rot, const double[:, ::1] trans,
               const double[:, ::1] intr, const double[:, ::1] boxes, const cnp.uint8_t[::1] has_box):
    """Keep a point iff it projects inside the box of every view that has one.

    ``intr`` rows are (f, cx, s, k1, k2); ``boxes`` rows are (u0, v0, u1, v1).
    Arithmetic order matches ``geometry.project_points`` so results agree bitwise.
    """
    cdef Py_ssize_t m = pts.shape[0], nv = rot.shape[0], i, k
    cdef double x, y, z, xc, yc, zc, un, u, v, r2
    keep = np.ones(m, dtype=np.uint8)
    cdef cnp.uint8_t[::1] kp = keep
    with nogil:
        for i in range(m):
            x = pts[i, 0]
            y = pts[i, 1]
            z = pts[i, 2]
            for k in range(nv):
                if not has_box[k]:
                    continue
                zc = rot[k, 2, 0] * x + rot[k, 2, 1] * y + rot[k, 2, 2] * z + trans[k, 2]
                if not zc > 0.0:
                    kp[i] = 0
                    break
                xc = rot[k, 0, 0] * x + rot[k, 0, 1] * y + rot[k, 0, 2] * z + trans[k, 0]
                yc = rot[k, 1, 0] * x + rot[k, 1, 1] * y + rot[k, 1, 2] * z + trans[k, 1]
                un = xc / zc
                r2 = un * un
                u = intr[k, 1] + intr[k, 0] * (un * (1.0 + intr[k, 3] * r2 + intr[k, 4] * (r2 * r2)))
                v = intr[k, 2] * yc
                if u < boxes[k, 0] or u > boxes[k, 2] or v < boxes[k, 1] or v > boxes[k, 3]:
                    kp[i] = 0
                    break
    return keep.astype(bool)


def flood_fill(const cnp.uint8_t[:, :, ::1] allowed, Py_ssize_t sz, Py_ssize_t sy, Py_ssize_t sx):
    """6-connected component of ``allowed`` containing the seed (seed always included)."""
    cdef Py_ssize_t nz = allowed.shape[0], ny = allowed.shape[1], nx = allowed.shape[2]
    cdef Py_ssize_t total = nz * ny * nx
    out = np.zeros((nz, ny, nx), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] o = out
    queue_arr = np.empty(total, dtype=np.intp)
    cdef Py_ssize_t[::1] q = queue_arr
    cdef Py_ssize_t head = 0, tail = 0, idx, z, y, x, nzz, nyy, nxx, d
    cdef int dz[6]
    cdef int dy[6]
    cdef int dx[6]
    dz[:] = [1, -1, 0, 0, 0, 0]
    dy[:] = [0, 0, 1, -1, 0, 0]
    dx[:] = [0, 0, 0, 0, 1, -1]
    with nogil:
        o[sz, sy, sx] = 1
        q[tail] = (sz * ny + sy) * nx + sx
        tail += 1
        while head < tail:
            idx = q[head]
            head += 1
            x = idx % nx
            y = (idx // nx) % ny
            z = idx // (nx * ny)
            for d in range(6):
                nzz = z + dz[d]
                nyy = y + dy[d]
                nxx = x + dx[d]
                if nzz < 0 or nzz >= nz or nyy < 0 or nyy >= ny or nxx < 0 or nxx >= nx:
                    continue
                if o[nzz, nyy, nxx] or not allowed[nzz, nyy, nxx]:
                    continue
                o[nzz, nyy, nxx] = 1
                q[tail] = (nzz * ny + nyy) * nx + nxx
                tail += 1
    return out.astype(bool)
