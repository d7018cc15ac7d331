"""Multi-layer alpha blending and its two-bucket depth-bucketed variant.

Both consume each pixel's fragments strictly in submission order.  A
layer holds premultiplied color, transmittance and the depth of its front
member; when a blending array overflows, two adjacent layers are merged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .exact import Framebuffer, _as_rgba
from .rasterizer import Fragment, FragmentBuffer

__all__ = [
    "BlendArray",
    "BucketBounds",
    "MERGE_POLICIES",
    "mlab_insert",
    "mlab_resolve",
    "mlab_render",
    "mlabdb_pass1",
    "mlabdb_pass2",
    "mlabdb_render",
]

MERGE_POLICIES = ("deepest", "min-gap")


@dataclass
class BlendArray:
    capacity: int
    color: np.ndarray
    transmittance: np.ndarray
    depth: np.ndarray
    occupancy: int = 0
    policy: str = "deepest"

    @classmethod
    def empty(cls, capacity: int = 8, policy: str = "deepest") -> "BlendArray":
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        if policy not in MERGE_POLICIES:
            raise ValueError(f"unknown merge policy {policy!r}")
        return cls(capacity, np.zeros((capacity + 1, 3)), np.ones(capacity + 1),
                   np.full(capacity + 1, np.inf), 0, policy)

    def layers(self):
        n = self.occupancy
        return self.color[:n].copy(), self.transmittance[:n].copy(), self.depth[:n].copy()

    def copy(self) -> "BlendArray":
        return BlendArray(self.capacity, self.color.copy(), self.transmittance.copy(),
                          self.depth.copy(), self.occupancy, self.policy)


@dataclass(frozen=True)
class BucketBounds:
    z_min: float
    z_o: float
    tau_alpha: float
    tau_o: float


@nb.njit(cache=True)
def _insert(col, tr, dep, n, k, policy, cr, cg, cb, a, z):
    """Insert one fragment into layer arrays of length k + 1; returns (n, merged)."""
    pos = n
    while pos > 0 and dep[pos - 1] > z:
        pos -= 1
    for i in range(n, pos, -1):
        col[i, 0] = col[i - 1, 0]
        col[i, 1] = col[i - 1, 1]
        col[i, 2] = col[i - 1, 2]
        tr[i] = tr[i - 1]
        dep[i] = dep[i - 1]
    col[pos, 0] = a * cr
    col[pos, 1] = a * cg
    col[pos, 2] = a * cb
    tr[pos] = 1.0 - a
    dep[pos] = z
    n += 1
    if n <= k:
        return n, False
    m = n - 2
    if policy == 1:
        best = np.inf
        for i in range(n - 1):
            gap = dep[i + 1] - dep[i]
            if gap < best:
                best = gap
                m = i
    t = tr[m]
    for c in range(3):
        col[m, c] = col[m, c] + t * col[m + 1, c]
    tr[m] = t * tr[m + 1]
    for i in range(m + 1, n - 1):
        col[i, 0] = col[i + 1, 0]
        col[i, 1] = col[i + 1, 1]
        col[i, 2] = col[i + 1, 2]
        tr[i] = tr[i + 1]
        dep[i] = dep[i + 1]
    return n - 1, True


@nb.njit(cache=True)
def _accumulate(col, tr, n, acc, T):
    for i in range(n):
        for c in range(3):
            acc[c] += T * col[i, c]
        T *= tr[i]
    return T


def _policy_code(policy: str) -> int:
    if policy not in MERGE_POLICIES:
        raise ValueError(f"unknown merge policy {policy!r}; expected one of {MERGE_POLICIES}")
    return MERGE_POLICIES.index(policy)


def mlab_insert(array: BlendArray, fragment) -> BlendArray:
    """Return a new array with ``fragment`` merged in."""
    f = Fragment(*fragment)
    out = array.copy()
    n, _ = _insert(out.color, out.transmittance, out.depth, out.occupancy, out.capacity,
                   _policy_code(out.policy), float(f.color[0]), float(f.color[1]),
                   float(f.color[2]), float(f.alpha), float(f.depth))
    out.occupancy = n
    return out


def mlab_resolve(array: BlendArray, background) -> np.ndarray:
    """Blend the layers front to back over ``background``; returns RGBA."""
    bg = _as_rgba(background)
    acc = np.zeros(3)
    T = _accumulate(array.color, array.transmittance, array.occupancy, acc, 1.0)
    return np.array([*(acc + T * bg[:3]), 1.0 - T])


@nb.njit(cache=True)
def _mlab_kernel(offsets, depth, color, alpha, k, policy, bg, out):
    col = np.empty((k + 1, 3))
    tr = np.empty(k + 1)
    dep = np.empty(k + 1)
    acc = np.empty(3)
    merges = 0
    for p in range(len(offsets) - 1):
        n = 0
        for f in range(offsets[p], offsets[p + 1]):
            n, merged = _insert(col, tr, dep, n, k, policy, color[f, 0], color[f, 1],
                                color[f, 2], alpha[f], depth[f])
            if merged:
                merges += 1
        acc[:] = 0.0
        T = _accumulate(col, tr, n, acc, 1.0)
        for c in range(3):
            out[p, c] = acc[c] + T * bg[c]
        out[p, 3] = 1.0 - T
    return merges


def mlab_render(fb: FragmentBuffer, background, k: int = 8, policy: str = "deepest") -> Framebuffer:
    """Single-pass MLAB over every pixel's submission-ordered stream."""
    if k < 1:
        raise ValueError("k must be at least 1")
    bg = _as_rgba(background)
    out = np.empty((fb.n_pixels, 4))
    merges = _mlab_kernel(fb.offsets, fb.depth, fb.color, fb.alpha, int(k), _policy_code(policy),
                          bg, out)
    return Framebuffer.from_flat(out, fb.width, fb.height, bg, merges=int(merges),
                                 fragments=fb.count)


# --------------------------------------------------------------------------
# depth bucketing


@nb.njit(cache=True)
def _bounds(depth, alpha, lo, hi, tau_a, tau_o, sentinel):
    z_min = sentinel
    z_o = sentinel
    for f in range(lo, hi):
        if alpha[f] >= tau_a and depth[f] < z_min:
            z_min = depth[f]
        if alpha[f] >= tau_o and depth[f] < z_o:
            z_o = depth[f]
    return z_min, z_o


def mlabdb_pass1(fragments, tau_alpha: float = 0.2, tau_o: float = 0.98,
                 far: float = np.inf) -> BucketBounds:
    """Bucket bounds for one pixel: nearest depths reaching each threshold."""
    frags = [Fragment(*f) for f in fragments]
    z = np.array([f.depth for f in frags], dtype=np.float64)
    a = np.array([f.alpha for f in frags], dtype=np.float64)
    z_min, z_o = _bounds(z, a, 0, len(frags), float(tau_alpha), float(tau_o), float(far))
    return BucketBounds(float(z_min), float(z_o), float(tau_alpha), float(tau_o))


def _check_layers(n_front, n_back):
    if n_front not in (1, 2):
        raise ValueError("front bucket takes 1 or 2 layers")
    if n_back not in (4, 5):
        raise ValueError("back bucket takes 4 or 5 layers")


@nb.njit(cache=True)
def _bucket_pixel(depth, color, alpha, lo, hi, z_min, z_o, nf, nb_, policy,
                  fcol, ftr, fdep, bcol, btr, bdep, bg, out):
    n_front = 0
    n_back = 0
    discarded = 0
    for f in range(lo, hi):
        z = depth[f]
        if z > z_o:
            discarded += 1
        elif z < z_min:
            n_front, _ = _insert(fcol, ftr, fdep, n_front, nf, policy, color[f, 0],
                                 color[f, 1], color[f, 2], alpha[f], z)
        else:
            n_back, _ = _insert(bcol, btr, bdep, n_back, nb_, policy, color[f, 0],
                                color[f, 1], color[f, 2], alpha[f], z)
    acc = np.zeros(3)
    T = _accumulate(fcol, ftr, n_front, acc, 1.0)
    T = _accumulate(bcol, btr, n_back, acc, T)
    for c in range(3):
        out[c] = acc[c] + T * bg[c]
    out[3] = 1.0 - T
    return discarded


def mlabdb_pass2(fragments, bounds: BucketBounds, n_front: int = 2, n_back: int = 4,
                 background=(0.0, 0.0, 0.0), policy: str = "deepest") -> np.ndarray:
    """Resolve one pixel's stream with front/back buckets; returns RGBA."""
    _check_layers(n_front, n_back)
    frags = [Fragment(*f) for f in fragments]
    z = np.array([f.depth for f in frags], dtype=np.float64)
    a = np.array([f.alpha for f in frags], dtype=np.float64)
    c = np.array([f.color for f in frags], dtype=np.float64).reshape(-1, 3)
    out = np.empty(4)
    _bucket_pixel(z, c, a, 0, len(frags), bounds.z_min, bounds.z_o, n_front, n_back,
                  _policy_code(policy), np.empty((n_front + 1, 3)), np.empty(n_front + 1),
                  np.empty(n_front + 1), np.empty((n_back + 1, 3)), np.empty(n_back + 1),
                  np.empty(n_back + 1), _as_rgba(background), out)
    return out


@nb.njit(cache=True)
def _mlabdb_kernel(offsets, depth, color, alpha, tau_a, tau_o, sentinel, nf, nb_, policy,
                   bg, out):
    fcol = np.empty((nf + 1, 3))
    ftr = np.empty(nf + 1)
    fdep = np.empty(nf + 1)
    bcol = np.empty((nb_ + 1, 3))
    btr = np.empty(nb_ + 1)
    bdep = np.empty(nb_ + 1)
    discarded = 0
    for p in range(len(offsets) - 1):
        lo = offsets[p]
        hi = offsets[p + 1]
        z_min, z_o = _bounds(depth, alpha, lo, hi, tau_a, tau_o, sentinel)
        discarded += _bucket_pixel(depth, color, alpha, lo, hi, z_min, z_o, nf, nb_, policy,
                                   fcol, ftr, fdep, bcol, btr, bdep, bg, out[p])
    return discarded


def mlabdb_render(fb: FragmentBuffer, background, tau_alpha: float = 0.2, tau_o: float = 0.98,
                  n_front: int = 2, n_back: int = 4, far: float = np.inf,
                  policy: str = "deepest") -> Framebuffer:
    """Two-pass MLAB with opacity-driven depth buckets."""
    _check_layers(n_front, n_back)
    bg = _as_rgba(background)
    out = np.empty((fb.n_pixels, 4))
    discarded = _mlabdb_kernel(fb.offsets, fb.depth, fb.color, fb.alpha, float(tau_alpha),
                               float(tau_o), float(far), int(n_front), int(n_back),
                               _policy_code(policy), bg, out)
    return Framebuffer.from_flat(out, fb.width, fb.height, bg, discarded=int(discarded),
                                 fragments=fb.count)
