"""BVH ray tracer with iterative closest-hit blending.

Each pixel issues one primary ray.  The closest hit beyond the previous
one (plus a small restart offset) is blended front to back until the ray
misses or transmittance drops below ``TERMINATION_T``.  Triangles use a
watertight intersection test, so no ray slips between triangles sharing
an edge; a ray through the edge itself may report both, and the restart
offset blends that surface once.  An analytic tube mode intersects
infinite cylinders around the original polyline segments, clipped by the
planes through the segment ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .camera import Camera, Ray
from .exact import Framebuffer, _as_rgba
from .geometry import LineSet, TransferFunction, TriMesh
from .rasterizer import DEFAULT_SHADING, Shading, shade, tf_eval

__all__ = [
    "TERMINATION_T",
    "Bvh",
    "Hit",
    "build_bvh",
    "build_tube_bvh",
    "closest_hit",
    "all_hits",
    "trace_blend",
    "raytrace_image",
    "intersect_ray_tube",
]

TERMINATION_T = 1e-3
PRIM_TRIANGLE = 0
PRIM_TUBE = 1


@dataclass
class Bvh:
    """Flattened AABB hierarchy.

    Inner nodes have ``left >= 0`` and children ``left``/``right``; leaves
    have ``left == -1`` and own ``order[start:start + count]``.
    """

    kind: int
    node_lo: np.ndarray
    node_hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    # primitive data: triangles (n, 3, 3) corners; tubes (n, 2, 3) endpoints
    prims: np.ndarray
    # triangles: vertex normals (n, 3, 3) and attributes (n, 3); tubes: (n, 2) attributes
    normals: np.ndarray
    attributes: np.ndarray
    radius: float = 0.0
    leaf_size: int = 4
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def n_prims(self) -> int:
        return len(self.prims)

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.node_hi[0] - self.node_lo[0])) if self.n_nodes else 0.0

    def leaves(self):
        for n in range(self.n_nodes):
            if self.left[n] < 0:
                yield n, self.order[self.start[n]:self.start[n] + self.count[n]]


@dataclass(frozen=True)
class Hit:
    t: float
    prim: int
    normal: np.ndarray
    attribute: float
    rgba: np.ndarray | None = None


# --------------------------------------------------------------------------
# construction


@nb.njit(cache=True)
def _build(plo, phi, leaf_size):
    n = len(plo)
    cen = 0.5 * (plo + phi)
    order = np.arange(n)
    cap = 2 * n + 1
    node_lo = np.empty((cap, 3))
    node_hi = np.empty((cap, 3))
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)
    stack = np.empty((cap, 3), dtype=np.int64)
    sp = 0
    stack[sp, 0] = 0
    stack[sp, 1] = 0
    stack[sp, 2] = n
    sp += 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        lo = stack[sp, 1]
        hi = stack[sp, 2]
        for c in range(3):
            node_lo[node, c] = np.inf
            node_hi[node, c] = -np.inf
        for k in range(lo, hi):
            p = order[k]
            for c in range(3):
                node_lo[node, c] = min(node_lo[node, c], plo[p, c])
                node_hi[node, c] = max(node_hi[node, c], phi[p, c])
        start[node] = lo
        count[node] = hi - lo
        if hi - lo <= leaf_size:
            continue
        ext = node_hi[node] - node_lo[node]
        axis = 0
        if ext[1] > ext[axis]:
            axis = 1
        if ext[2] > ext[axis]:
            axis = 2
        keys = cen[order[lo:hi], axis]
        perm = np.argsort(keys, kind="mergesort")
        order[lo:hi] = order[lo:hi][perm]
        mid = lo + (hi - lo) // 2
        l = n_nodes
        r = n_nodes + 1
        n_nodes += 2
        left[node] = l
        right[node] = r
        stack[sp, 0] = r
        stack[sp, 1] = mid
        stack[sp, 2] = hi
        sp += 1
        stack[sp, 0] = l
        stack[sp, 1] = lo
        stack[sp, 2] = mid
        sp += 1
    return (node_lo[:n_nodes], node_hi[:n_nodes], left[:n_nodes], right[:n_nodes],
            start[:n_nodes], count[:n_nodes], order)


def _make(kind, plo, phi, prims, normals, attributes, radius, leaf_size):
    if len(prims) == 0:
        raise ValueError("cannot build a BVH over zero primitives")
    if leaf_size < 1:
        raise ValueError("leaf size must be at least 1")
    built = _build(np.ascontiguousarray(plo), np.ascontiguousarray(phi), int(leaf_size))
    return Bvh(kind, *built, prims=np.ascontiguousarray(prims),
               normals=np.ascontiguousarray(normals), attributes=np.ascontiguousarray(attributes),
               radius=float(radius), leaf_size=int(leaf_size))


def build_bvh(mesh: TriMesh, leaf_size: int = 4) -> Bvh:
    """Median split on the longest node axis down to ``leaf_size`` triangles."""
    corners = mesh.positions[mesh.triangles]
    return _make(PRIM_TRIANGLE, corners.min(axis=1), corners.max(axis=1), corners,
                 mesh.normals[mesh.triangles], mesh.attributes[mesh.triangles], 0.0, leaf_size)


def build_tube_bvh(lineset: LineSet, radius: float, leaf_size: int = 4) -> Bvh:
    """BVH over analytic tube segments (one primitive per polyline segment)."""
    p0, p1, a0, a1, _ = lineset.segments()
    seg = np.stack([p0, p1], axis=1)
    return _make(PRIM_TUBE, np.minimum(p0, p1) - radius, np.maximum(p0, p1) + radius, seg,
                 np.zeros((len(seg), 0, 3)), np.stack([a0, a1], axis=1), radius, leaf_size)


# --------------------------------------------------------------------------
# intersection kernels


@nb.njit(cache=True)
def _ray_setup(d):
    kz = 0
    if abs(d[1]) > abs(d[kz]):
        kz = 1
    if abs(d[2]) > abs(d[kz]):
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    return kx, ky, kz, d[kx] / d[kz], d[ky] / d[kz], 1.0 / d[kz]


@nb.njit(cache=True)
def _tri_hit(o, tri, kx, ky, kz, Sx, Sy, Sz):
    """Watertight ray/triangle test; returns (hit, t, b0, b1, b2)."""
    ax = tri[0, kx] - o[kx]
    ay = tri[0, ky] - o[ky]
    az = tri[0, kz] - o[kz]
    bx = tri[1, kx] - o[kx]
    by = tri[1, ky] - o[ky]
    bz = tri[1, kz] - o[kz]
    cx = tri[2, kx] - o[kx]
    cy = tri[2, ky] - o[ky]
    cz = tri[2, kz] - o[kz]
    Ax = ax - Sx * az
    Ay = ay - Sy * az
    Bx = bx - Sx * bz
    By = by - Sy * bz
    Cx = cx - Sx * cz
    Cy = cy - Sy * cz
    U = Cx * By - Cy * Bx
    V = Ax * Cy - Ay * Cx
    W = Bx * Ay - By * Ax
    if (U < 0.0 or V < 0.0 or W < 0.0) and (U > 0.0 or V > 0.0 or W > 0.0):
        return False, 0.0, 0.0, 0.0, 0.0
    det = U + V + W
    if det == 0.0:
        return False, 0.0, 0.0, 0.0, 0.0
    T = U * (Sz * az) + V * (Sz * bz) + W * (Sz * cz)
    inv = 1.0 / det
    return True, T * inv, U * inv, V * inv, W * inv


@nb.njit(cache=True)
def tube_hits(o, d, p0, p1, r):
    """Cylinder of radius r around segment p0-p1, clipped by its end planes.

    ``d`` must be unit length.  Returns (n, t0, s0, t1, s1) with s the
    axial interpolation factor in [0, 1] and t0 <= t1.
    """
    ux = p1[0] - p0[0]
    uy = p1[1] - p0[1]
    uz = p1[2] - p0[2]
    L = np.sqrt(ux * ux + uy * uy + uz * uz)
    if L == 0.0:
        return 0, 0.0, 0.0, 0.0, 0.0
    ux /= L
    uy /= L
    uz /= L
    wx = o[0] - p0[0]
    wy = o[1] - p0[1]
    wz = o[2] - p0[2]
    dd = d[0] * ux + d[1] * uy + d[2] * uz
    wd = wx * ux + wy * uy + wz * uz
    dpx = d[0] - dd * ux
    dpy = d[1] - dd * uy
    dpz = d[2] - dd * uz
    wpx = wx - wd * ux
    wpy = wy - wd * uy
    wpz = wz - wd * uz
    A = dpx * dpx + dpy * dpy + dpz * dpz
    if A < 1e-14:
        return 0, 0.0, 0.0, 0.0, 0.0
    B = dpx * wpx + dpy * wpy + dpz * wpz
    C = wpx * wpx + wpy * wpy + wpz * wpz - r * r
    disc = B * B - A * C
    if disc < 0.0:
        return 0, 0.0, 0.0, 0.0, 0.0
    sq = np.sqrt(disc)
    n = 0
    t0 = 0.0
    s0 = 0.0
    t1 = 0.0
    s1 = 0.0
    for k in range(2):
        if k == 0:
            t = (-B - sq) / A
        else:
            t = (-B + sq) / A
        s = (wd + t * dd) / L
        if s < 0.0 or s > 1.0:
            continue
        if n == 0:
            t0 = t
            s0 = s
        else:
            t1 = t
            s1 = s
        n += 1
    return n, t0, s0, t1, s1


@nb.njit(cache=True)
def _box_entry(o, d, lo, hi, t_lo, t_hi):
    t0 = t_lo
    t1 = t_hi
    for c in range(3):
        if d[c] == 0.0:
            if o[c] < lo[c] or o[c] > hi[c]:
                return np.inf
            continue
        inv = 1.0 / d[c]
        a = (lo[c] - o[c]) * inv
        b = (hi[c] - o[c]) * inv
        if a > b:
            a, b = b, a
        t0 = max(t0, a)
        t1 = min(t1, b)
        if t0 > t1:
            return np.inf
    return t0


@nb.njit(cache=True)
def _closest(o, d, kind, node_lo, node_hi, left, right, start, count, order, prims, radius,
             t_min, t_max, stack):
    """Closest primitive with t_min < t <= t_max; ties go to the lower id.

    Returns (prim, t, w0, w1, w2); prim is -1 on a miss.  For tubes w0 is
    the axial factor.
    """
    kx, ky, kz, Sx, Sy, Sz = _ray_setup(d)
    best_t = np.inf
    best_p = -1
    bw0 = 0.0
    bw1 = 0.0
    bw2 = 0.0
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(o, d, node_lo[node], node_hi[node], t_min, min(t_max, best_t)) == np.inf:
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                p = order[k]
                if kind == PRIM_TRIANGLE:
                    hit, t, w0, w1, w2 = _tri_hit(o, prims[p], kx, ky, kz, Sx, Sy, Sz)
                    if hit and t > t_min and t <= t_max:
                        if t < best_t or (t == best_t and p < best_p):
                            best_t = t
                            best_p = p
                            bw0 = w0
                            bw1 = w1
                            bw2 = w2
                else:
                    n, t0, s0, t1, s1 = tube_hits(o, d, prims[p, 0], prims[p, 1], radius)
                    for j in range(n):
                        t = t0 if j == 0 else t1
                        s = s0 if j == 0 else s1
                        if t > t_min and t <= t_max:
                            if t < best_t or (t == best_t and p < best_p):
                                best_t = t
                                best_p = p
                                bw0 = s
            continue
        stack[sp] = right[node]
        sp += 1
        stack[sp] = left[node]
        sp += 1
    return best_p, best_t, bw0, bw1, bw2


@nb.njit(cache=True)
def _surface(o, d, kind, p, t, w0, w1, w2, prims, normals, attributes, radius, out_n):
    """Normal (into out_n) and attribute at a hit."""
    if kind == PRIM_TRIANGLE:
        a = w0 * attributes[p, 0] + w1 * attributes[p, 1] + w2 * attributes[p, 2]
        for c in range(3):
            out_n[c] = w0 * normals[p, 0, c] + w1 * normals[p, 1, c] + w2 * normals[p, 2, c]
    else:
        s = w0
        a = attributes[p, 0] + s * (attributes[p, 1] - attributes[p, 0])
        for c in range(3):
            axis_pt = prims[p, 0, c] + s * (prims[p, 1, c] - prims[p, 0, c])
            out_n[c] = (o[c] + t * d[c] - axis_pt) / radius
    nn = np.sqrt(out_n[0] ** 2 + out_n[1] ** 2 + out_n[2] ** 2)
    if nn > 0.0:
        for c in range(3):
            out_n[c] /= nn
    return a


@nb.njit(cache=True)
def _trace(o, d, kind, node_lo, node_hi, left, right, start, count, order, prims, normals,
           attributes, radius, t_lo, t_hi, eps, max_iter, tf_t, tf_rgba, params, bg, out, stack):
    """Iterative closest-hit blending along one ray; returns (hits, overflow)."""
    nrm = np.empty(3)
    base = np.empty(4)
    col = np.empty(4)
    r = 0.0
    g = 0.0
    b = 0.0
    T = 1.0
    t_min = t_lo
    hits = 0
    while True:
        if hits >= max_iter:
            return hits, True
        p, t, w0, w1, w2 = _closest(o, d, kind, node_lo, node_hi, left, right, start, count,
                                    order, prims, radius, t_min, t_hi, stack)
        if p < 0:
            break
        a = _surface(o, d, kind, p, t, w0, w1, w2, prims, normals, attributes, radius, nrm)
        tf_eval(tf_t, tf_rgba, a, base)
        shade(base, nrm[0], nrm[1], nrm[2], -d[0], -d[1], -d[2], params, col)
        w = T * col[3]
        r += w * col[0]
        g += w * col[1]
        b += w * col[2]
        T *= 1.0 - col[3]
        hits += 1
        if T < TERMINATION_T:
            break
        t_min = t + eps
    out[0] = r + T * bg[0]
    out[1] = g + T * bg[1]
    out[2] = b + T * bg[2]
    out[3] = 1.0 - T
    return hits, False


@nb.njit(cache=True)
def _render(eye, dirs, fwd, near, far, kind, node_lo, node_hi, left, right, start, count, order,
            prims, normals, attributes, radius, eps, max_iter, tf_t, tf_rgba, params, bg,
            out, hits):
    stack = np.empty(2 * len(left) + 2, dtype=np.int64)
    overflow = False
    for p in range(len(dirs)):
        d = dirs[p]
        cos = d[0] * fwd[0] + d[1] * fwd[1] + d[2] * fwd[2]
        n, over = _trace(eye, d, kind, node_lo, node_hi, left, right, start, count, order,
                         prims, normals, attributes, radius, near / cos, far / cos, eps,
                         max_iter, tf_t, tf_rgba, params, bg, out[p], stack)
        hits[p] = n
        overflow = overflow or over
    return overflow


@nb.njit(cache=True)
def _all_hits_kernel(o, d, kind, prims, radius, t_min, t_max):
    kx, ky, kz, Sx, Sy, Sz = _ray_setup(d)
    ts = np.empty(2 * len(prims))
    ps = np.empty(2 * len(prims), dtype=np.int64)
    ws = np.empty((2 * len(prims), 3))
    n = 0
    for p in range(len(prims)):
        if kind == PRIM_TRIANGLE:
            hit, t, w0, w1, w2 = _tri_hit(o, prims[p], kx, ky, kz, Sx, Sy, Sz)
            if hit and t > t_min and t <= t_max:
                ts[n] = t
                ps[n] = p
                ws[n, 0] = w0
                ws[n, 1] = w1
                ws[n, 2] = w2
                n += 1
        else:
            m, t0, s0, t1, s1 = tube_hits(o, d, prims[p, 0], prims[p, 1], radius)
            for j in range(m):
                t = t0 if j == 0 else t1
                if t > t_min and t <= t_max:
                    ts[n] = t
                    ps[n] = p
                    ws[n, 0] = s0 if j == 0 else s1
                    ws[n, 1] = 0.0
                    ws[n, 2] = 0.0
                    n += 1
    return ts[:n], ps[:n], ws[:n]


# --------------------------------------------------------------------------
# public API


def _hit(bvh: Bvh, ray: Ray, p, t, w, tf=None, shading=DEFAULT_SHADING) -> Hit:
    nrm = np.empty(3)
    a = _surface(ray.origin, ray.direction, bvh.kind, p, t, w[0], w[1], w[2], bvh.prims,
                 bvh.normals, bvh.attributes, bvh.radius, nrm)
    rgba = None
    if tf is not None:
        base = np.empty(4)
        rgba = np.empty(4)
        tf_eval(tf.t, tf.rgba, a, base)
        shade(base, nrm[0], nrm[1], nrm[2], *(-ray.direction), shading.as_array(), rgba)
    return Hit(float(t), int(p), nrm, float(a), rgba)


def closest_hit(ray: Ray, bvh: Bvh, t_min: float = 0.0, t_max: float = np.inf) -> Hit | None:
    """Nearest primitive hit with t_min < t <= t_max, or None on a miss."""
    if t_min < 0:
        raise ValueError("t_min must be non-negative")
    stack = np.empty(2 * bvh.n_nodes + 2, dtype=np.int64)
    p, t, w0, w1, w2 = _closest(ray.origin, ray.direction, bvh.kind, bvh.node_lo, bvh.node_hi,
                                bvh.left, bvh.right, bvh.start, bvh.count, bvh.order, bvh.prims,
                                bvh.radius, float(t_min), float(t_max), stack)
    if p < 0:
        return None
    return _hit(bvh, ray, p, t, (w0, w1, w2))


def all_hits(ray: Ray, bvh: Bvh, tf: TransferFunction | None = None, t_min: float = 0.0,
             t_max: float = np.inf, shading: Shading = DEFAULT_SHADING) -> list[Hit]:
    """Every primitive intersection by brute force, sorted by (t, primitive)."""
    ts, ps, ws = _all_hits_kernel(ray.origin, ray.direction, bvh.kind, bvh.prims, bvh.radius,
                                  float(t_min), float(t_max))
    idx = np.lexsort((ps, ts))
    return [_hit(bvh, ray, ps[i], ts[i], ws[i], tf, shading) for i in idx]


EPSILON_SCALE = 1e-6


def default_epsilon(bvh: Bvh) -> float:
    """Restart offset: a millionth of the scene diagonal.

    Larger offsets skip the exit hit of grazing rays through thin tubes in
    close-up views.
    """
    return EPSILON_SCALE * bvh.diagonal()


def trace_blend(ray: Ray, bvh: Bvh, tf: TransferFunction, background, epsilon: float | None = None,
                t_min: float = 0.0, t_max: float = np.inf, max_iterations: int | None = None,
                shading: Shading = DEFAULT_SHADING):
    """Blend all hits along ``ray`` front to back; returns (rgba, hit count)."""
    eps = default_epsilon(bvh) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    cap = 10 * bvh.n_prims if max_iterations is None else int(max_iterations)
    out = np.empty(4)
    stack = np.empty(2 * bvh.n_nodes + 2, dtype=np.int64)
    hits, overflow = _trace(ray.origin, ray.direction, bvh.kind, bvh.node_lo, bvh.node_hi,
                            bvh.left, bvh.right, bvh.start, bvh.count, bvh.order, bvh.prims,
                            bvh.normals, bvh.attributes, bvh.radius, float(t_min), float(t_max),
                            eps, cap, tf.t, tf.rgba, shading.as_array(), _as_rgba(background),
                            out, stack)
    if overflow:
        raise RuntimeError(f"ray exceeded {cap} iterations; restart offset {eps} is pathological")
    return out, int(hits)


def raytrace_image(scene, camera: Camera, tf: TransferFunction, background,
                   epsilon: float | None = None, max_iterations: int | None = None,
                   shading: Shading = DEFAULT_SHADING, leaf_size: int = 4) -> Framebuffer:
    """One primary ray per pixel center; ``scene`` is a TriMesh or a prebuilt Bvh.

    Hits are restricted to view depths in [near, far], matching the
    rasterizer's clipping.  ``counters["hits"]`` is the per-pixel count of
    blended hits.
    """
    bg = _as_rgba(background)
    if not isinstance(scene, Bvh) and scene.n_triangles == 0:
        flat = np.tile(bg, (camera.width * camera.height, 1))
        flat[:, 3] = 0.0
        return Framebuffer.from_flat(flat, camera.width, camera.height, bg,
                                     hits=np.zeros(camera.shape, dtype=np.int64), iterations=0,
                                     max_iterations=0)
    bvh = scene if isinstance(scene, Bvh) else build_bvh(scene, leaf_size)
    eps = default_epsilon(bvh) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    cap = 10 * bvh.n_prims if max_iterations is None else int(max_iterations)
    dirs = np.ascontiguousarray(camera.ray_directions().reshape(-1, 3))
    out = np.empty((len(dirs), 4))
    hits = np.zeros(len(dirs), dtype=np.int64)
    overflow = _render(np.asarray(camera.eye, np.float64), dirs, camera.basis()[2],
                       float(camera.near), float(camera.far), bvh.kind, bvh.node_lo, bvh.node_hi,
                       bvh.left, bvh.right, bvh.start, bvh.count, bvh.order, bvh.prims,
                       bvh.normals, bvh.attributes, bvh.radius, eps, cap, tf.t, tf.rgba,
                       shading.as_array(), bg, out, hits)
    if overflow:
        raise RuntimeError(f"a ray exceeded {cap} iterations; restart offset {eps} is pathological")
    return Framebuffer.from_flat(out, camera.width, camera.height, bg,
                                 hits=hits.reshape(camera.height, camera.width),
                                 iterations=int(hits.sum()), max_iterations=int(hits.max()))


def intersect_ray_tube(ray: Ray, segment, radius: float, attributes=(0.0, 1.0)) -> list[Hit]:
    """0..2 hits of ``ray`` with the tube around ``segment = (p0, p1)``.

    The attribute is interpolated along the axis from ``attributes``; with
    the default (0, 1) it equals the axial interpolation factor.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    p0 = np.asarray(segment[0], np.float64)
    p1 = np.asarray(segment[1], np.float64)
    if np.array_equal(p0, p1):
        raise ValueError("degenerate segment")
    n, t0, s0, t1, s1 = tube_hits(ray.origin, ray.direction, p0, p1, float(radius))
    out = []
    for t, s in ((t0, s0), (t1, s1))[:n]:
        axis_pt = p0 + s * (p1 - p0)
        normal = (ray.at(t) - axis_pt) / radius
        out.append(Hit(float(t), 0, normal / np.linalg.norm(normal),
                       float(attributes[0] + s * (attributes[1] - attributes[0]))))
    return out
