"""Software perspective rasterizer producing per-pixel fragment streams.

Fragments keep primitive submission order inside every pixel, which is
the property the order-dependent compositors (MLAB, MLABDB) rely on.
Depth is view-space depth along the camera axis, interpolated
perspective-correctly; pixels on a shared edge follow the top-left rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba as nb
import numpy as np

from .camera import Camera
from .geometry import TransferFunction, TriMesh

__all__ = [
    "Shading",
    "Fragment",
    "FragmentBuffer",
    "rasterize",
    "shade_fragment",
    "depth_complexity",
    "zbuffer_render",
]

MODE_COUNT = 0
MODE_FILL = 1
MODE_PEEL = 2
MODE_NEAREST = 3


@dataclass(frozen=True)
class Shading:
    """Blinn-Phong headlight constants."""

    ka: float = 0.1
    kd: float = 0.85
    ks: float = 0.05
    shininess: float = 16.0

    def as_array(self) -> np.ndarray:
        return np.array([self.ka, self.kd, self.ks, self.shininess], dtype=np.float64)


DEFAULT_SHADING = Shading()


class Fragment(NamedTuple):
    depth: float
    color: tuple
    alpha: float
    submission: int


@dataclass
class FragmentBuffer:
    """Flat per-pixel fragment storage.

    Fragments of pixel ``p = y * width + x`` live in
    ``offsets[p]:offsets[p + 1]`` in submission order.
    """

    width: int
    height: int
    offsets: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    alpha: np.ndarray
    submission: np.ndarray

    @property
    def count(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def pixel(self, x: int, y: int) -> list[Fragment]:
        p = y * self.width + x
        lo, hi = self.offsets[p], self.offsets[p + 1]
        return [Fragment(float(self.depth[k]), tuple(self.color[k]), float(self.alpha[k]),
                         int(self.submission[k])) for k in range(lo, hi)]

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @classmethod
    def from_streams(cls, width: int, height: int, streams) -> "FragmentBuffer":
        """Build from a row-major list of per-pixel Fragment (or tuple) lists."""
        if len(streams) != width * height:
            raise ValueError("need one stream per pixel")
        lengths = np.array([len(s) for s in streams], dtype=np.int64)
        offsets = np.zeros(len(streams) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        n = int(offsets[-1])
        depth = np.zeros(n)
        color = np.zeros((n, 3))
        alpha = np.zeros(n)
        sub = np.zeros(n, dtype=np.int64)
        k = 0
        for s in streams:
            for frag in s:
                f = Fragment(*frag)
                depth[k], color[k], alpha[k], sub[k] = f.depth, f.color, f.alpha, f.submission
                k += 1
        fb = cls(width, height, offsets, depth, color, alpha, sub)
        fb.validate()
        return fb

    def validate(self):
        if self.offsets[0] != 0 or np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must start at 0 and be non-decreasing")
        if len(self.offsets) != self.n_pixels + 1 or len(self.depth) != self.count:
            raise ValueError("inconsistent fragment buffer sizes")
        if not _streams_ordered(self.offsets, self.submission):
            raise ValueError("submission indices must increase strictly within a pixel")

    def filtered(self, keep: np.ndarray) -> "FragmentBuffer":
        """Buffer holding only fragments where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        pix = np.repeat(np.arange(self.n_pixels), self.lengths())[keep]
        offsets = np.zeros(self.n_pixels + 1, dtype=np.int64)
        np.cumsum(np.bincount(pix, minlength=self.n_pixels), out=offsets[1:])
        return FragmentBuffer(self.width, self.height, offsets, self.depth[keep],
                              self.color[keep], self.alpha[keep], self.submission[keep])


@nb.njit(cache=True)
def _streams_ordered(offsets, sub):
    for p in range(len(offsets) - 1):
        for k in range(offsets[p] + 1, offsets[p + 1]):
            if sub[k] <= sub[k - 1]:
                return False
    return True


# --------------------------------------------------------------------------
# shading and transfer function kernels, shared with the ray renderers


@nb.njit(cache=True)
def tf_eval(tf_t, tf_rgba, a, out):
    if a <= tf_t[0]:
        for c in range(4):
            out[c] = tf_rgba[0, c]
        return
    n = len(tf_t)
    if a >= tf_t[n - 1]:
        for c in range(4):
            out[c] = tf_rgba[n - 1, c]
        return
    k = 1
    while tf_t[k] < a:
        k += 1
    w = (a - tf_t[k - 1]) / (tf_t[k] - tf_t[k - 1])
    for c in range(4):
        out[c] = tf_rgba[k - 1, c] * (1.0 - w) + tf_rgba[k, c] * w


@nb.njit(cache=True)
def shade(base, nx, ny, nz, vx, vy, vz, params, out):
    """Headlight Blinn-Phong; (vx, vy, vz) points from the surface to the eye."""
    ndl = nx * vx + ny * vy + nz * vz
    # light direction equals view direction, so the half vector is v itself
    specular = 0.0
    if ndl > 0.0:
        specular = params[2] * ndl ** params[3]
    diff = params[0] + params[1] * abs(ndl)
    for c in range(3):
        v = base[c] * diff + specular
        out[c] = min(max(v, 0.0), 1.0)
    out[3] = base[3]


def shade_fragment(base, normal, view_dir, shading: Shading = DEFAULT_SHADING) -> np.ndarray:
    """Shade straight RGBA ``base``; ``view_dir`` points toward the eye."""
    base = np.asarray(base, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    v = np.asarray(view_dir, dtype=np.float64)
    l = v  # headlight
    h = l + v
    h = h / np.linalg.norm(h)
    rgb = base[:3] * (shading.ka + shading.kd * max(0.0, abs(float(n @ l))))
    rgb = rgb + shading.ks * max(0.0, float(n @ h)) ** shading.shininess
    return np.concatenate([np.clip(rgb, 0.0, 1.0), base[3:4]])


# --------------------------------------------------------------------------
# triangle setup


@nb.njit(cache=True)
def _clip_point(vi, vj, view, near):
    # canonical endpoint order so shared edges clip to identical points
    if vi > vj:
        vi, vj = vj, vi
    zi = view[vi, 2]
    zj = view[vj, 2]
    t = (near - zi) / (zj - zi)
    return vi, vj, t


@nb.njit(cache=True)
def _setup_triangles(tris, view, normals, attrs, near, far):
    """Near-clip triangles; returns per-piece vertex data and source ids."""
    n = len(tris)
    pv = np.empty((2 * n, 3, 3))
    pn = np.empty((2 * n, 3, 3))
    pa = np.empty((2 * n, 3))
    src = np.empty(2 * n, dtype=np.int64)
    m = 0
    poly_v = np.empty((4, 3))
    poly_n = np.empty((4, 3))
    poly_a = np.empty(4)
    for t in range(n):
        ids = tris[t]
        zmax = max(view[ids[0], 2], max(view[ids[1], 2], view[ids[2], 2]))
        zmin = min(view[ids[0], 2], min(view[ids[1], 2], view[ids[2], 2]))
        if zmax < near or zmin > far:
            continue
        k = 0
        for e in range(3):
            a = ids[e]
            b = ids[(e + 1) % 3]
            a_in = view[a, 2] >= near
            b_in = view[b, 2] >= near
            if a_in:
                poly_v[k] = view[a]
                poly_n[k] = normals[a]
                poly_a[k] = attrs[a]
                k += 1
            if a_in != b_in:
                vi, vj, w = _clip_point(a, b, view, near)
                for c in range(3):
                    poly_v[k, c] = view[vi, c] + w * (view[vj, c] - view[vi, c])
                    poly_n[k, c] = normals[vi, c] + w * (normals[vj, c] - normals[vi, c])
                poly_v[k, 2] = near
                poly_a[k] = attrs[vi] + w * (attrs[vj] - attrs[vi])
                k += 1
        for f in range(1, k - 1):
            pv[m, 0] = poly_v[0]
            pv[m, 1] = poly_v[f]
            pv[m, 2] = poly_v[f + 1]
            pn[m, 0] = poly_n[0]
            pn[m, 1] = poly_n[f]
            pn[m, 2] = poly_n[f + 1]
            pa[m, 0] = poly_a[0]
            pa[m, 1] = poly_a[f]
            pa[m, 2] = poly_a[f + 1]
            src[m] = t
            m += 1
    return pv[:m], pn[:m], pa[:m], src[:m]


@nb.njit(cache=True)
def _edge(ax, ay, bx, by, px, py):
    """Edge function, antisymmetric in (a, b) bit-for-bit."""
    if ax > bx or (ax == bx and ay > by):
        return -((ax - bx) * (py - by) - (ay - by) * (px - bx))
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


@nb.njit(cache=True)
def _owns_edge(ax, ay, bx, by):
    # top edge: horizontal with interior below (y down); left edge: going up
    dy = by - ay
    dx = bx - ax
    return (dy == 0.0 and dx > 0.0) or dy < 0.0


@nb.njit(cache=True)
def _raster_kernel(mode, pv, pn, pa, src, width, height, sx, sy, near, far, basis,
                   tf_t, tf_rgba, params,
                   counts, cursor, out_z, out_c, out_a, out_s,
                   prev_z, prev_s, best_z, best_s, best_c):
    base = np.empty(4)
    col = np.empty(4)
    scr = np.empty((3, 2))
    order = np.empty(3, dtype=np.int64)
    for t in range(len(pv)):
        for k in range(3):
            z = pv[t, k, 2]
            scr[k, 0] = (pv[t, k, 0] / (z * sx) * 0.5 + 0.5) * width
            scr[k, 1] = (0.5 - pv[t, k, 1] / (z * sy) * 0.5) * height
        area = _edge(scr[0, 0], scr[0, 1], scr[1, 0], scr[1, 1], scr[2, 0], scr[2, 1])
        if area == 0.0 or not np.isfinite(area):
            continue
        order[0] = 0
        if area > 0:
            order[1] = 1
            order[2] = 2
        else:
            order[1] = 2
            order[2] = 1
            area = -area
        i0, i1, i2 = order[0], order[1], order[2]
        x0, y0 = scr[i0, 0], scr[i0, 1]
        x1, y1 = scr[i1, 0], scr[i1, 1]
        x2, y2 = scr[i2, 0], scr[i2, 1]
        own0 = _owns_edge(x1, y1, x2, y2)
        own1 = _owns_edge(x2, y2, x0, y0)
        own2 = _owns_edge(x0, y0, x1, y1)
        xmin = max(int(np.ceil(min(x0, min(x1, x2)) - 0.5)), 0)
        xmax = min(int(np.floor(max(x0, max(x1, x2)) - 0.5)), width - 1)
        ymin = max(int(np.ceil(min(y0, min(y1, y2)) - 0.5)), 0)
        ymax = min(int(np.floor(max(y0, max(y1, y2)) - 0.5)), height - 1)
        iz0 = 1.0 / pv[t, i0, 2]
        iz1 = 1.0 / pv[t, i1, 2]
        iz2 = 1.0 / pv[t, i2, 2]
        sub = src[t]
        for py in range(ymin, ymax + 1):
            cy = py + 0.5
            for px in range(xmin, xmax + 1):
                cx = px + 0.5
                w0 = _edge(x1, y1, x2, y2, cx, cy)
                if w0 < 0.0 or (w0 == 0.0 and not own0):
                    continue
                w1 = _edge(x2, y2, x0, y0, cx, cy)
                if w1 < 0.0 or (w1 == 0.0 and not own1):
                    continue
                w2 = _edge(x0, y0, x1, y1, cx, cy)
                if w2 < 0.0 or (w2 == 0.0 and not own2):
                    continue
                l0 = w0 / area * iz0
                l1 = w1 / area * iz1
                l2 = w2 / area * iz2
                zrec = 1.0 / (l0 + l1 + l2)
                if zrec > far or zrec < near:
                    continue
                pix = py * width + px
                if mode == MODE_COUNT:
                    counts[pix] += 1
                    continue
                if mode == MODE_PEEL or mode == MODE_NEAREST:
                    if mode == MODE_PEEL:
                        if zrec < prev_z[pix] or (zrec == prev_z[pix] and sub <= prev_s[pix]):
                            continue
                    if zrec > best_z[pix] or (zrec == best_z[pix] and sub >= best_s[pix]):
                        continue
                l0 *= zrec
                l1 *= zrec
                l2 *= zrec
                a = l0 * pa[t, i0] + l1 * pa[t, i1] + l2 * pa[t, i2]
                nx = l0 * pn[t, i0, 0] + l1 * pn[t, i1, 0] + l2 * pn[t, i2, 0]
                ny = l0 * pn[t, i0, 1] + l1 * pn[t, i1, 1] + l2 * pn[t, i2, 1]
                nz = l0 * pn[t, i0, 2] + l1 * pn[t, i1, 2] + l2 * pn[t, i2, 2]
                nn = np.sqrt(nx * nx + ny * ny + nz * nz)
                if nn > 0.0:
                    nx /= nn
                    ny /= nn
                    nz /= nn
                # view direction toward the eye through this pixel center
                qx = (2.0 * cx / width - 1.0) * sx
                qy = (1.0 - 2.0 * cy / height) * sy
                vx = -(basis[2, 0] + qx * basis[0, 0] + qy * basis[1, 0])
                vy = -(basis[2, 1] + qx * basis[0, 1] + qy * basis[1, 1])
                vz = -(basis[2, 2] + qx * basis[0, 2] + qy * basis[1, 2])
                vn = np.sqrt(vx * vx + vy * vy + vz * vz)
                tf_eval(tf_t, tf_rgba, a, base)
                shade(base, nx, ny, nz, vx / vn, vy / vn, vz / vn, params, col)
                if mode == MODE_FILL:
                    k = cursor[pix]
                    cursor[pix] = k + 1
                    out_z[k] = zrec
                    out_c[k, 0] = col[0]
                    out_c[k, 1] = col[1]
                    out_c[k, 2] = col[2]
                    out_a[k] = col[3]
                    out_s[k] = sub
                else:
                    best_z[pix] = zrec
                    best_s[pix] = sub
                    for c in range(4):
                        best_c[pix, c] = col[c]


class _Setup(NamedTuple):
    pv: np.ndarray
    pn: np.ndarray
    pa: np.ndarray
    src: np.ndarray
    sx: float
    sy: float
    basis: np.ndarray


def _prepare(mesh: TriMesh, camera: Camera) -> _Setup:
    view = camera.to_view(mesh.positions) if len(mesh.positions) else np.zeros((0, 3))
    pv, pn, pa, src = _setup_triangles(mesh.triangles, np.ascontiguousarray(view),
                                       mesh.normals, mesh.attributes,
                                       float(camera.near), float(camera.far))
    sx, sy = camera.scale()
    return _Setup(pv, pn, pa, src, float(sx), float(sy), camera.basis())


_EMPTY_I = np.zeros(1, dtype=np.int64)
_EMPTY_F = np.zeros(1)
_EMPTY_C = np.zeros((1, 3))
_EMPTY_C4 = np.zeros((1, 4))


def _run(mode, setup: _Setup, camera: Camera, tf: TransferFunction, shading: Shading, **arrays):
    a = dict(counts=_EMPTY_I, cursor=_EMPTY_I, out_z=_EMPTY_F, out_c=_EMPTY_C, out_a=_EMPTY_F,
             out_s=_EMPTY_I, prev_z=_EMPTY_F, prev_s=_EMPTY_I, best_z=_EMPTY_F, best_s=_EMPTY_I,
             best_c=_EMPTY_C4)
    a.update(arrays)
    _raster_kernel(mode, setup.pv, setup.pn, setup.pa, setup.src, camera.width, camera.height,
                   setup.sx, setup.sy, float(camera.near), float(camera.far), setup.basis,
                   tf.t, tf.rgba, shading.as_array(),
                   a["counts"], a["cursor"], a["out_z"], a["out_c"], a["out_a"], a["out_s"],
                   a["prev_z"], a["prev_s"], a["best_z"], a["best_s"], a["best_c"])


def rasterize(mesh: TriMesh, camera: Camera, tf: TransferFunction,
              shading: Shading = DEFAULT_SHADING) -> FragmentBuffer:
    """Rasterize every triangle (no culling) into per-pixel fragment streams."""
    setup = _prepare(mesh, camera)
    n_pix = camera.width * camera.height
    counts = np.zeros(n_pix, dtype=np.int64)
    _run(MODE_COUNT, setup, camera, tf, shading, counts=counts)
    offsets = np.zeros(n_pix + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    n = int(offsets[-1])
    cursor = offsets[:-1].copy()
    depth = np.empty(n)
    color = np.empty((n, 3))
    alpha = np.empty(n)
    sub = np.empty(n, dtype=np.int64)
    _run(MODE_FILL, setup, camera, tf, shading, cursor=cursor, out_z=depth, out_c=color,
         out_a=alpha, out_s=sub)
    return FragmentBuffer(camera.width, camera.height, offsets, depth, color, alpha, sub)


def peel_layer(setup: _Setup, camera: Camera, tf: TransferFunction, shading: Shading,
               prev_z: np.ndarray, prev_s: np.ndarray):
    """One geometry pass keeping, per pixel, the nearest fragment behind (prev_z, prev_s).

    Returns (depth, submission, rgba); pixels without such a fragment have
    submission -1.
    """
    n_pix = camera.width * camera.height
    best_z = np.full(n_pix, np.inf)
    best_s = np.full(n_pix, np.iinfo(np.int64).max, dtype=np.int64)
    best_c = np.zeros((n_pix, 4))
    _run(MODE_PEEL, setup, camera, tf, shading, prev_z=prev_z, prev_s=prev_s,
         best_z=best_z, best_s=best_s, best_c=best_c)
    best_s[best_s == np.iinfo(np.int64).max] = -1
    return best_z, best_s, best_c


def zbuffer_render(mesh: TriMesh, camera: Camera, tf: TransferFunction, background,
                   shading: Shading = DEFAULT_SHADING) -> np.ndarray:
    """Nearest-fragment-wins image (alpha ignored), (H, W, 3)."""
    setup = _prepare(mesh, camera)
    n_pix = camera.width * camera.height
    best_z = np.full(n_pix, np.inf)
    best_s = np.full(n_pix, np.iinfo(np.int64).max, dtype=np.int64)
    best_c = np.zeros((n_pix, 4))
    _run(MODE_NEAREST, setup, camera, tf, shading, best_z=best_z, best_s=best_s, best_c=best_c)
    img = np.where(np.isinf(best_z)[:, None], np.asarray(background, float)[None, :3], best_c[:, :3])
    return img.reshape(camera.height, camera.width, 3)


def depth_complexity(fb: FragmentBuffer) -> tuple[np.ndarray, int]:
    """Per-pixel fragment counts as an (H, W) image, plus the total."""
    counts = fb.lengths().reshape(fb.height, fb.width)
    return counts, int(counts.sum())
