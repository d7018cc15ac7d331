"""Ground-truth compositing: sorted fragment lists and depth peeling.

Fragments are ordered by the key (depth, submission index); all three
sorting algorithms produce that same total order, so their images are
bit-identical.  Comparison counters are returned alongside the results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numba as nb
import numpy as np

from .camera import Camera
from .geometry import TransferFunction, TriMesh
from .rasterizer import DEFAULT_SHADING, FragmentBuffer, Shading, _prepare, peel_layer

__all__ = [
    "SortKey",
    "Framebuffer",
    "SORTERS",
    "SHELL_GAPS",
    "composite_front_to_back",
    "sort_insertion",
    "sort_shell",
    "sort_heap",
    "render_fragment_lists",
    "depth_peel",
]

SHELL_GAPS = (24, 9, 4, 1)
SORTERS = ("insertion", "shell", "heap")


class SortKey(NamedTuple):
    depth: float
    submission: int


@dataclass
class Framebuffer:
    """Resolved RGBA image; alpha holds total coverage 1 - T."""

    rgba: np.ndarray
    background: np.ndarray
    counters: dict = field(default_factory=dict)

    @property
    def rgb(self) -> np.ndarray:
        return self.rgba[..., :3]

    @classmethod
    def from_flat(cls, flat: np.ndarray, width: int, height: int, background, **counters):
        return cls(flat.reshape(height, width, 4), np.asarray(background, dtype=np.float64),
                   dict(counters))


def _as_rgba(background) -> np.ndarray:
    bg = np.zeros(4)
    b = np.asarray(background, dtype=np.float64).reshape(-1)
    bg[: len(b)] = b
    if len(b) == 3:
        bg[3] = 1.0
    return bg


def composite_front_to_back(fragments, background) -> np.ndarray:
    """Blend depth-sorted fragments over ``background``; returns (r, g, b, 1 - T)."""
    bg = _as_rgba(background)
    c = np.zeros(3)
    T = 1.0
    prev = None
    for f in fragments:
        key = (f.depth, f.submission)
        assert prev is None or prev < key, "fragments must be sorted by (depth, submission)"
        prev = key
        c += T * f.alpha * np.asarray(f.color, dtype=np.float64)
        T *= 1.0 - f.alpha
    c += T * bg[:3]
    return np.array([c[0], c[1], c[2], 1.0 - T])


# --------------------------------------------------------------------------
# sorting kernels: operate on (depth, submission) arrays, return a permutation


@nb.njit(cache=True)
def _less(z, s, i, j):
    return z[i] < z[j] or (z[i] == z[j] and s[i] < s[j])


@nb.njit(cache=True)
def _insertion(z, s, idx, lo, hi, gap):
    cmp = 0
    for i in range(lo + gap, hi):
        v = idx[i]
        j = i
        while j - gap >= lo:
            cmp += 1
            if _less(z, s, v, idx[j - gap]):
                idx[j] = idx[j - gap]
                j -= gap
            else:
                break
        idx[j] = v
    return cmp


@nb.njit(cache=True)
def _insertion_sort(z, s, idx, lo, hi):
    return _insertion(z, s, idx, lo, hi, 1)


@nb.njit(cache=True)
def _shell_sort(z, s, idx, lo, hi):
    cmp = 0
    n = hi - lo
    for gap in (24, 9, 4, 1):
        if gap >= n:
            continue
        cmp += _insertion(z, s, idx, lo, hi, gap)
    return cmp


@nb.njit(cache=True)
def _heap_sort(z, s, idx, lo, hi):
    """Min-heap: insert all keys, then pop the root until empty."""
    n = hi - lo
    heap = np.empty(n, dtype=np.int64)
    cmp = 0
    for k in range(n):
        heap[k] = idx[lo + k]
        c = k
        while c > 0:
            p = (c - 1) // 2
            cmp += 1
            if _less(z, s, heap[c], heap[p]):
                heap[c], heap[p] = heap[p], heap[c]
                c = p
            else:
                break
    size = n
    for k in range(n):
        idx[lo + k] = heap[0]
        size -= 1
        heap[0] = heap[size]
        p = 0
        while True:
            l = 2 * p + 1
            if l >= size:
                break
            m = l
            r = l + 1
            if r < size:
                cmp += 1
                if _less(z, s, heap[r], heap[l]):
                    m = r
            cmp += 1
            if _less(z, s, heap[m], heap[p]):
                heap[m], heap[p] = heap[p], heap[m]
                p = m
            else:
                break
    return cmp


@nb.njit(cache=True)
def _sort_range(kind, z, s, idx, lo, hi):
    if kind == 0:
        return _insertion_sort(z, s, idx, lo, hi)
    if kind == 1:
        return _shell_sort(z, s, idx, lo, hi)
    return _heap_sort(z, s, idx, lo, hi)


def _sort_keys(kind: int, keys):
    keys = [SortKey(*k) if not isinstance(k, SortKey) else k for k in keys]
    z = np.array([k.depth for k in keys], dtype=np.float64)
    s = np.array([k.submission for k in keys], dtype=np.int64)
    idx = np.arange(len(keys), dtype=np.int64)
    cmp = _sort_range(kind, z, s, idx, 0, len(keys)) if len(keys) else 0
    return [keys[i] for i in idx], int(cmp)


def sort_insertion(keys):
    """Insertion sort; returns (sorted keys, comparison count)."""
    return _sort_keys(0, keys)


def sort_shell(keys):
    """Shell sort with gaps (24, 9, 4, 1); returns (sorted keys, comparison count)."""
    return _sort_keys(1, keys)


def sort_heap(keys):
    """Min-heap priority queue sort; returns (sorted keys, comparison count)."""
    return _sort_keys(2, keys)


def sort_comparisons(kind: str, depth: np.ndarray, submission: np.ndarray | None = None) -> int:
    """Comparison count for sorting one list with the named algorithm."""
    z = np.ascontiguousarray(depth, dtype=np.float64)
    s = np.arange(len(z), dtype=np.int64) if submission is None else np.asarray(submission, np.int64)
    idx = np.arange(len(z), dtype=np.int64)
    return int(_sort_range(SORTERS.index(kind), z, s, idx, 0, len(z)))


# --------------------------------------------------------------------------
# per-pixel resolve


@nb.njit(cache=True)
def _resolve_lists(kind, offsets, depth, color, alpha, sub, bg, packed, out):
    idx = np.arange(len(depth))
    total = 0
    for p in range(len(offsets) - 1):
        lo = offsets[p]
        hi = offsets[p + 1]
        total += _sort_range(kind, depth, sub, idx, lo, hi)
        r = 0.0
        g = 0.0
        b = 0.0
        T = 1.0
        for k in range(lo, hi):
            f = idx[k]
            a = alpha[f]
            cr = color[f, 0]
            cg = color[f, 1]
            cb = color[f, 2]
            if packed:
                a = np.floor(a * 255.0 + 0.5) / 255.0
                cr = np.floor(cr * 255.0 + 0.5) / 255.0
                cg = np.floor(cg * 255.0 + 0.5) / 255.0
                cb = np.floor(cb * 255.0 + 0.5) / 255.0
            w = T * a
            r += w * cr
            g += w * cg
            b += w * cb
            T *= 1.0 - a
        out[p, 0] = r + T * bg[0]
        out[p, 1] = g + T * bg[1]
        out[p, 2] = b + T * bg[2]
        out[p, 3] = 1.0 - T
    return total


def render_fragment_lists(fb: FragmentBuffer, background, sorter: str = "heap",
                          packed: bool = False) -> Framebuffer:
    """Sort every pixel's fragments with ``sorter`` and blend front to back.

    ``packed`` quantizes colors and opacity to 8 bits per channel before
    blending, mimicking 32-bit packed fragment storage.
    """
    if sorter not in SORTERS:
        raise ValueError(f"unknown sorter {sorter!r}; expected one of {SORTERS}")
    bg = _as_rgba(background)
    out = np.empty((fb.n_pixels, 4))
    comparisons = _resolve_lists(SORTERS.index(sorter), fb.offsets, fb.depth, fb.color,
                                 fb.alpha, fb.submission, bg, packed, out)
    return Framebuffer.from_flat(out, fb.width, fb.height, bg, comparisons=int(comparisons),
                                 fragments=fb.count)


@nb.njit(cache=True)
def _blend_layer(acc, T, best_s, best_c):
    for p in range(len(best_s)):
        if best_s[p] < 0:
            continue
        a = best_c[p, 3]
        w = T[p] * a
        for c in range(3):
            acc[p, c] += w * best_c[p, c]
        T[p] *= 1.0 - a


def depth_peel(mesh: TriMesh, camera: Camera, tf: TransferFunction, background,
               shading: Shading = DEFAULT_SHADING, max_passes: int | None = None) -> Framebuffer:
    """Multi-pass depth peeling.

    Each pass re-rasterizes the mesh and keeps, per pixel, the nearest
    fragment strictly behind the previous pass under the (depth, submission)
    order.  Runs until a pass produces nothing unless ``max_passes`` caps it.
    """
    bg = _as_rgba(background)
    setup = _prepare(mesh, camera)
    n_pix = camera.width * camera.height
    prev_z = np.full(n_pix, -np.inf)
    prev_s = np.full(n_pix, -1, dtype=np.int64)
    acc = np.zeros((n_pix, 3))
    T = np.ones(n_pix)
    per_pass = []
    while max_passes is None or len(per_pass) < max_passes:
        z, s, c = peel_layer(setup, camera, tf, shading, prev_z, prev_s)
        hit = s >= 0
        per_pass.append(int(hit.sum()))
        if not per_pass[-1]:
            break
        _blend_layer(acc, T, s, c)
        prev_z = np.where(hit, z, np.inf)
        prev_s = np.where(hit, s, np.iinfo(np.int64).max)
    out = np.empty((n_pix, 4))
    out[:, :3] = acc + T[:, None] * bg[None, :3]
    out[:, 3] = 1.0 - T
    return Framebuffer.from_flat(out, camera.width, camera.height, bg, passes=len(per_pass),
                                 fragments_per_pass=per_pass, fragments=int(sum(per_pass)))
