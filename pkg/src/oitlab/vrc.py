"""Voxel-based ray casting of tube lines.

Polylines are clipped at voxel faces and every crossing is snapped to the
center of a cell in a Q x Q subdivision of the crossed face, so the chain
stored in one voxel ends exactly where the chain in the next voxel
starts.  Rays walk the grid with a 3D DDA and intersect analytic tubes
around the stored segments of the current voxel and of every neighbor
within one tube radius (the 26-neighborhood when the radius is below the
cell size); a hit is owned by the voxel whose ray interval contains it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba as nb
import numpy as np
from scipy import ndimage

from .camera import Camera, Ray
from .exact import Framebuffer, _as_rgba
from .geometry import GeometryError, LineSet, TransferFunction
from .rasterizer import DEFAULT_SHADING, Shading, shade, tf_eval
from .raytracer import TERMINATION_T, tube_hits

__all__ = [
    "VoxelGrid",
    "QuantizedEndpoint",
    "voxelize_lines",
    "dda_traverse",
    "vrc_render",
    "write_grid",
    "read_grid",
]

GRID_MAGIC = b"OITVRC01"


class QuantizedEndpoint(NamedTuple):
    face: int
    i: int
    j: int
    interior: bool


@dataclass
class VoxelGrid:
    """Per-voxel tube segments in CSR layout (voxel id = (z * ny + y) * nx + x)."""

    res: tuple
    lo: np.ndarray
    hi: np.ndarray
    quant: int
    radius: float
    offsets: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    line: np.ndarray
    ordinal: np.ndarray
    # quantization audit: (face, i, j, interior) per endpoint and the unsnapped points
    q0: np.ndarray
    q1: np.ndarray
    true0: np.ndarray
    true1: np.ndarray

    @property
    def cell(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.res, dtype=np.float64)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.res))

    @property
    def n_segments(self) -> int:
        return len(self.p0)

    def voxel_id(self, ix, iy, iz) -> int:
        nx, ny, _ = self.res
        return (iz * ny + iy) * nx + ix

    def voxel_of_segment(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_voxels), np.diff(self.offsets))

    def segments_in(self, ix, iy, iz) -> slice:
        v = self.voxel_id(ix, iy, iz)
        return slice(int(self.offsets[v]), int(self.offsets[v + 1]))

    def endpoint(self, k: int, which: int) -> QuantizedEndpoint:
        q = (self.q0 if which == 0 else self.q1)[k]
        return QuantizedEndpoint(int(q[0]), int(q[1]), int(q[2]), bool(q[3]))


def _grid_box(lineset: LineSet, radius: float):
    if not lineset.polylines:
        return -np.ones(3), np.ones(3)
    lo, hi = lineset.bounds()
    ext = hi - lo
    pad = radius + 1e-3 * max(float(ext.max()), radius)
    lo = lo - pad
    hi = hi + pad
    if not np.all(hi - lo > 0):
        raise GeometryError("degenerate grid bounds")
    return lo, hi


def voxelize_lines(lineset: LineSet, res=64, quant: int = 16, radius: float = 0.02) -> VoxelGrid:
    """Clip polylines into per-voxel chains with face-quantized crossings."""
    res = (int(res),) * 3 if np.isscalar(res) else tuple(int(r) for r in res)
    if min(res) < 1 or quant < 1:
        raise ValueError("resolution and quantization level must be at least 1")
    lo, hi = _grid_box(lineset, radius)
    h = (hi - lo) / np.asarray(res, np.float64)
    rec = []  # voxel, p0, p1, a0, a1, line, ordinal, q0, q1, true0, true1
    res_a = np.asarray(res)

    def voxel_of(p):
        return np.clip(np.floor((p - lo) / h).astype(np.int64), 0, res_a - 1)

    for li, line in enumerate(lineset.polylines):
        pts = lineset.positions[line]
        att = lineset.attributes[line]
        v = voxel_of(pts[0])
        entry, entry_true, entry_a = pts[0].copy(), pts[0].copy(), float(att[0])
        entry_q = (-1, 0, 0, 1)
        ordinal = 0
        for k in range(len(pts) - 1):
            p, q = pts[k], pts[k + 1]
            dvec = q - p
            while True:
                t_best, axis, step = np.inf, -1, 0
                for c in range(3):
                    if dvec[c] > 0:
                        tb = (lo[c] + (v[c] + 1) * h[c] - p[c]) / dvec[c]
                        s = 1
                    elif dvec[c] < 0:
                        tb = (lo[c] + v[c] * h[c] - p[c]) / dvec[c]
                        s = -1
                    else:
                        continue
                    if tb < t_best:
                        t_best, axis, step = tb, c, s
                if axis < 0 or t_best >= 1.0:
                    break
                nv = v.copy()
                nv[axis] += step
                if nv[axis] < 0 or nv[axis] >= res[axis]:
                    break
                t_best = max(t_best, 0.0)
                x = p + t_best * dvec
                plane = lo[axis] + (v[axis] + (1 if step > 0 else 0)) * h[axis]
                x[axis] = plane
                xa = float(att[k] + t_best * (att[k + 1] - att[k]))
                xq = x.copy()
                cells = []
                for c in range(3):
                    if c == axis:
                        continue
                    f = (x[c] - (lo[c] + v[c] * h[c])) / h[c] * quant
                    ci = min(max(int(np.floor(f)), 0), quant - 1)
                    xq[c] = lo[c] + v[c] * h[c] + (ci + 0.5) * h[c] / quant
                    cells.append(ci)
                exit_face = 2 * axis + (1 if step > 0 else 0)
                rec.append((v, entry, xq, entry_a, xa, li, ordinal, entry_q,
                            (exit_face, cells[0], cells[1], 0), entry_true, x))
                ordinal += 1
                entry, entry_true, entry_a = xq, x, xa
                entry_q = (exit_face ^ 1, cells[0], cells[1], 0)
                v = nv
        rec.append((v, entry, pts[-1].copy(), entry_a, float(att[-1]), li, ordinal, entry_q,
                    (-1, 0, 0, 1), entry_true, pts[-1].copy()))

    n = len(rec)
    if n == 0:
        z3, z4 = np.zeros((0, 3)), np.zeros((0, 4), dtype=np.int64)
        zi = np.zeros(0, dtype=np.int64)
        return VoxelGrid(res, lo, hi, int(quant), float(radius),
                         np.zeros(int(np.prod(res)) + 1, dtype=np.int64), z3, z3.copy(),
                         np.zeros(0), np.zeros(0), zi, zi.copy(), z4, z4.copy(), z3.copy(), z3.copy())
    vox = np.array([(r[0][2] * res[1] + r[0][1]) * res[0] + r[0][0] for r in rec], dtype=np.int64)
    order = np.argsort(vox, kind="stable")
    offsets = np.zeros(int(np.prod(res)) + 1, dtype=np.int64)
    np.cumsum(np.bincount(vox, minlength=int(np.prod(res))), out=offsets[1:])

    def col(i, dtype=np.float64, shape=None):
        arr = np.array([rec[j][i] for j in order], dtype=dtype)
        return arr.reshape((n,) + shape) if shape else arr

    return VoxelGrid(res, lo, hi, int(quant), float(radius), offsets,
                     col(1, shape=(3,)), col(2, shape=(3,)), col(3), col(4),
                     col(5, np.int64), col(6, np.int64), col(7, np.int64, (4,)),
                     col(8, np.int64, (4,)), col(9, shape=(3,)), col(10, shape=(3,)))


# --------------------------------------------------------------------------
# traversal


@nb.njit(cache=True)
def _grid_entry(o, d, lo, hi, t_lo, t_hi):
    t0 = t_lo
    t1 = t_hi
    for c in range(3):
        if d[c] == 0.0:
            if o[c] < lo[c] or o[c] > hi[c]:
                return np.inf, -np.inf
            continue
        a = (lo[c] - o[c]) / d[c]
        b = (hi[c] - o[c]) / d[c]
        if a > b:
            a, b = b, a
        t0 = max(t0, a)
        t1 = min(t1, b)
    return t0, t1


@nb.njit(cache=True)
def _dda_init(o, d, lo, h, res, t0):
    v = np.empty(3, dtype=np.int64)
    step = np.empty(3, dtype=np.int64)
    tmax = np.empty(3)
    tdelta = np.empty(3)
    for c in range(3):
        x = o[c] + t0 * d[c]
        i = int(np.floor((x - lo[c]) / h[c]))
        v[c] = min(max(i, 0), res[c] - 1)
        if d[c] > 0.0:
            step[c] = 1
            tmax[c] = (lo[c] + (v[c] + 1) * h[c] - o[c]) / d[c]
            tdelta[c] = h[c] / d[c]
        elif d[c] < 0.0:
            step[c] = -1
            tmax[c] = (lo[c] + v[c] * h[c] - o[c]) / d[c]
            tdelta[c] = -h[c] / d[c]
        else:
            step[c] = 0
            tmax[c] = np.inf
            tdelta[c] = np.inf
    return v, step, tmax, tdelta


@nb.njit(cache=True)
def _dda_kernel(o, d, lo, hi, h, res, t_lo, t_hi, out_v, out_t):
    t0, t1 = _grid_entry(o, d, lo, hi, t_lo, t_hi)
    if t0 >= t1:
        return 0
    v, step, tmax, tdelta = _dda_init(o, d, lo, h, res, t0)
    n = 0
    t = t0
    while True:
        axis = 0
        if tmax[1] < tmax[axis]:
            axis = 1
        if tmax[2] < tmax[axis]:
            axis = 2
        t_exit = min(tmax[axis], t1)
        out_v[n, 0] = v[0]
        out_v[n, 1] = v[1]
        out_v[n, 2] = v[2]
        out_t[n, 0] = t
        out_t[n, 1] = t_exit
        n += 1
        if tmax[axis] >= t1:
            break
        t = tmax[axis]
        v[axis] += step[axis]
        if v[axis] < 0 or v[axis] >= res[axis]:
            break
        tmax[axis] += tdelta[axis]
    return n


def dda_traverse(ray: Ray, grid: VoxelGrid, t_min: float = 0.0, t_max: float = np.inf):
    """Voxels pierced by ``ray`` in order, as ((ix, iy, iz) array, (t_entry, t_exit) array)."""
    res = np.asarray(grid.res, dtype=np.int64)
    cap = int(res.sum()) + 3
    out_v = np.empty((cap, 3), dtype=np.int64)
    out_t = np.empty((cap, 2))
    n = _dda_kernel(np.asarray(ray.origin, np.float64), np.asarray(ray.direction, np.float64),
                    grid.lo, grid.hi, grid.cell, res, float(t_min), float(t_max), out_v, out_t)
    return out_v[:n], out_t[:n]


def _reach(grid: VoxelGrid) -> np.ndarray:
    """Neighborhood half-width per axis: voxels a tube can overlap into."""
    return np.maximum(np.ceil(grid.radius / grid.cell - 1e-9), 1).astype(np.int64)


def _neighborhood_counts(grid: VoxelGrid, reach) -> tuple[np.ndarray, int]:
    """Occupancy of every voxel's neighborhood and the largest neighborhood segment count."""
    nx, ny, nz = grid.res
    counts = np.diff(grid.offsets).reshape(nz, ny, nx)
    size = tuple(int(2 * w + 1) for w in reach[::-1])
    occ = ndimage.maximum_filter(counts > 0, size=size, mode="constant")
    total = ndimage.uniform_filter(counts.astype(np.float64), size=size, mode="constant")
    most = int(np.rint(total.max() * np.prod(size))) if counts.size else 0
    return np.ascontiguousarray(occ.ravel()), most


@nb.njit(cache=True)
def _render_kernel(eye, dirs, fwd, near, far, lo, hi, h, res, offsets, p0, p1, a0, a1, radius,
                   reach, occ, skip_empty, tf_t, tf_rgba, params, bg, out, hits, max_local):
    nx, ny, nz = res[0], res[1], res[2]
    ht = np.empty(max_local)
    hs = np.empty(max_local)
    hp = np.empty(max_local, dtype=np.int64)
    nb_ = np.empty((2 * reach[0] + 1) * (2 * reach[1] + 1) * (2 * reach[2] + 1), dtype=np.int64)
    base = np.empty(4)
    col = np.empty(4)
    tested = 0
    for p in range(len(dirs)):
        d = dirs[p]
        cos = d[0] * fwd[0] + d[1] * fwd[1] + d[2] * fwd[2]
        t_lo = near / cos
        t_hi = far / cos
        r = 0.0
        g = 0.0
        b = 0.0
        T = 1.0
        blended = 0
        t0, t1 = _grid_entry(eye, d, lo, hi, t_lo, t_hi)
        if t0 < t1:
            v, step, tmax, tdelta = _dda_init(eye, d, lo, h, res, t0)
            t_in = t0
            done = False
            while not done:
                axis = 0
                if tmax[1] < tmax[axis]:
                    axis = 1
                if tmax[2] < tmax[axis]:
                    axis = 2
                t_out = min(tmax[axis], t1)
                vid = (v[2] * ny + v[1]) * nx + v[0]
                if occ[vid] or not skip_empty:
                    # the voxel first, then every neighbor its tubes can reach
                    m = 1
                    nb_[0] = vid
                    for kz in range(max(v[2] - reach[2], 0), min(v[2] + reach[2], nz - 1) + 1):
                        for ky in range(max(v[1] - reach[1], 0), min(v[1] + reach[1], ny - 1) + 1):
                            for kx in range(max(v[0] - reach[0], 0), min(v[0] + reach[0], nx - 1) + 1):
                                w = (kz * ny + ky) * nx + kx
                                if w != vid and offsets[w + 1] > offsets[w]:
                                    nb_[m] = w
                                    m += 1
                    n = 0
                    for q in range(m):
                        w = nb_[q]
                        for s in range(offsets[w], offsets[w + 1]):
                            tested += 1
                            k, ta, sa, tb, sb = tube_hits(eye, d, p0[s], p1[s], radius)
                            for j in range(k):
                                t = ta if j == 0 else tb
                                sf = sa if j == 0 else sb
                                # interval ownership: the hit belongs to this voxel
                                if t < t_in or t >= t_out or t < t_lo or t > t_hi:
                                    continue
                                # insertion by (t, segment)
                                i = n
                                while i > 0 and (ht[i - 1] > t or (ht[i - 1] == t and hp[i - 1] > s)):
                                    ht[i] = ht[i - 1]
                                    hs[i] = hs[i - 1]
                                    hp[i] = hp[i - 1]
                                    i -= 1
                                ht[i] = t
                                hs[i] = sf
                                hp[i] = s
                                n += 1
                    for i in range(n):
                        s = hp[i]
                        sf = hs[i]
                        t = ht[i]
                        a = a0[s] + sf * (a1[s] - a0[s])
                        nxv = 0.0
                        nyv = 0.0
                        nzv = 0.0
                        px = eye[0] + t * d[0] - (p0[s, 0] + sf * (p1[s, 0] - p0[s, 0]))
                        py = eye[1] + t * d[1] - (p0[s, 1] + sf * (p1[s, 1] - p0[s, 1]))
                        pz = eye[2] + t * d[2] - (p0[s, 2] + sf * (p1[s, 2] - p0[s, 2]))
                        ln = np.sqrt(px * px + py * py + pz * pz)
                        if ln > 0.0:
                            nxv = px / ln
                            nyv = py / ln
                            nzv = pz / ln
                        tf_eval(tf_t, tf_rgba, a, base)
                        shade(base, nxv, nyv, nzv, -d[0], -d[1], -d[2], params, col)
                        wgt = T * col[3]
                        r += wgt * col[0]
                        g += wgt * col[1]
                        b += wgt * col[2]
                        T *= 1.0 - col[3]
                        blended += 1
                        if T < TERMINATION_T:
                            done = True
                            break
                if done or tmax[axis] >= t1:
                    break
                t_in = tmax[axis]
                v[axis] += step[axis]
                if v[axis] < 0 or v[axis] >= res[axis]:
                    break
                tmax[axis] += tdelta[axis]
        out[p, 0] = r + T * bg[0]
        out[p, 1] = g + T * bg[1]
        out[p, 2] = b + T * bg[2]
        out[p, 3] = 1.0 - T
        hits[p] = blended
    return tested


def vrc_render(grid: VoxelGrid, camera: Camera, tf: TransferFunction, background,
               shading: Shading = DEFAULT_SHADING, skip_empty: bool = True) -> Framebuffer:
    """Ray cast the voxelized tubes; ``counters["hits"]`` counts blended hits per pixel."""
    bg = _as_rgba(background)
    res = np.asarray(grid.res, dtype=np.int64)
    reach = _reach(grid)
    occ, most = _neighborhood_counts(grid, reach)
    max_local = 2 * most + 2
    dirs = np.ascontiguousarray(camera.ray_directions().reshape(-1, 3))
    out = np.empty((len(dirs), 4))
    hits = np.zeros(len(dirs), dtype=np.int64)
    tested = _render_kernel(np.asarray(camera.eye, np.float64), dirs, camera.basis()[2],
                            float(camera.near), float(camera.far), grid.lo, grid.hi, grid.cell,
                            res, grid.offsets, grid.p0, grid.p1, grid.a0, grid.a1, grid.radius,
                            reach, occ, skip_empty, tf.t, tf.rgba, shading.as_array(), bg, out, hits,
                            max_local)
    return Framebuffer.from_flat(out, camera.width, camera.height, bg,
                                 hits=hits.reshape(camera.height, camera.width),
                                 tube_tests=int(tested), segments=grid.n_segments)


# --------------------------------------------------------------------------
# binary dump: magic, int32 version-free header of res/quant/count, then arrays


def write_grid(grid: VoxelGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        np.array([*grid.res, grid.quant, grid.n_segments], dtype="<i8").tofile(fh)
        np.array([*grid.lo, *grid.hi, grid.radius], dtype="<f8").tofile(fh)
        grid.offsets.astype("<i8").tofile(fh)
        for arr in (grid.p0, grid.p1, grid.a0, grid.a1, grid.true0, grid.true1):
            arr.astype("<f8").tofile(fh)
        for arr in (grid.line, grid.ordinal, grid.q0, grid.q1):
            arr.astype("<i8").tofile(fh)


def read_grid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        if fh.read(len(GRID_MAGIC)) != GRID_MAGIC:
            raise ValueError("not a voxel grid dump")
        nx, ny, nz, quant, n = (int(x) for x in np.fromfile(fh, "<i8", 5))
        box = np.fromfile(fh, "<f8", 7)
        offsets = np.fromfile(fh, "<i8", nx * ny * nz + 1)
        f = [np.fromfile(fh, "<f8", k) for k in (3 * n, 3 * n, n, n, 3 * n, 3 * n)]
        i = [np.fromfile(fh, "<i8", k) for k in (n, n, 4 * n, 4 * n)]
    return VoxelGrid((nx, ny, nz), box[:3], box[3:6], quant, float(box[6]), offsets,
                     f[0].reshape(n, 3), f[1].reshape(n, 3), f[2], f[3], i[0], i[1],
                     i[2].reshape(n, 4), i[3].reshape(n, 4), f[4].reshape(n, 3), f[5].reshape(n, 3))
