"""Moment-based order-independent transparency with four power moments.

Pass one sums, per pixel, the absorbance ``-ln(1 - alpha)`` of every
fragment together with its absorbance-weighted powers of the
log-warped depth.  Pass two bounds the absorbance in front of each
fragment from those moments and composites additively.

The bounds come from the canonical three-point representation of the
moment sequence that places one support point at the query depth; the
mass strictly in front of the query is the lower bound and adding the
mass at the query gives the upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .exact import Framebuffer, _as_rgba
from .rasterizer import Fragment, FragmentBuffer

__all__ = [
    "ALPHA_MAX",
    "DEFAULT_BETA",
    "DEFAULT_BIAS",
    "UNIFORM_MOMENTS",
    "MomentPixel",
    "absorb",
    "warp_depth",
    "accumulate_moments",
    "absorbance_bounds",
    "reconstruct_transmittance",
    "mboit_render",
]

ALPHA_MAX = 1.0 - 1e-5
DEFAULT_BETA = 0.1
DEFAULT_BIAS = 6e-5
# power moments 1..4 of the uniform distribution on [-1, 1]
UNIFORM_MOMENTS = np.array([0.0, 1.0 / 3.0, 0.0, 1.0 / 5.0])

# below these pivots the Hankel matrix is treated as singular
_PIVOT_EPS = 1e-12
# support points closer than this (warped units) to the query count as coincident
_COINCIDE_EPS = 1e-9
# a near-singular matrix still allows mass fraction w at distance sqrt(var / w) from a
# recovered support point; widening the coincidence band by this factor times the
# residual standard deviation covers every fraction above 1e-6
_SPREAD = 1e3
# absolute rounding noise of central moments formed from raw moments of unit scale
_NOISE = 1e-14


@dataclass
class MomentPixel:
    b0: float = 0.0
    b: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def normalized(self) -> np.ndarray:
        return self.b / self.b0 if self.b0 > 0 else np.zeros(4)


@nb.njit(cache=True)
def _absorb(alpha):
    a = min(max(alpha, 0.0), ALPHA_MAX)
    return -np.log(1.0 - a)


@nb.njit(cache=True)
def _warp(z, log_near, log_far):
    return 2.0 * (np.log(z) - log_near) / (log_far - log_near) - 1.0


def absorb(alpha):
    """Absorbance of a layer with opacity ``alpha`` (clamped to ALPHA_MAX)."""
    a = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, ALPHA_MAX)
    return -np.log1p(-a) if a.ndim else float(-np.log1p(-a))


def warp_depth(z, near: float, far: float, counter: dict | None = None):
    """Map view depth in [near, far] to [-1, 1] on a logarithmic scale."""
    z = np.asarray(z, dtype=np.float64)
    outside = (z < near) | (z > far)
    if counter is not None:
        counter["clamped"] = counter.get("clamped", 0) + int(np.count_nonzero(outside))
    zc = np.clip(z, near, far)
    d = 2.0 * (np.log(zc) - np.log(near)) / (np.log(far) - np.log(near)) - 1.0
    return d if d.ndim else float(d)


def accumulate_moments(pixel: MomentPixel, fragment, near: float, far: float) -> MomentPixel:
    """Add one fragment's absorbance and warped-depth moments."""
    f = Fragment(*fragment)
    a = absorb(f.alpha)
    d = warp_depth(f.depth, near, far)
    powers = np.array([d, d * d, d * d * d, d * d * d * d])
    return MomentPixel(pixel.b0 + a, pixel.b + a * powers)


@nb.njit(cache=True, error_model="numpy")
def _bounds(m1, m2, m3, m4, d):
    """Fractions of total absorbance (strictly in front of d, at d).

    Support points that cannot be ordered against d in floating point
    count as at d, so the pair always brackets the true prefix.

    Takes normalized raw moments and works in coordinates centered on the
    mean.  The third value flags a singular Hankel matrix, in which case the
    support is recovered directly (one or two points).
    """
    # central moments
    mu2 = m2 - m1 * m1
    mu3 = m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1
    mu4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1 * m1 * m1 * m1
    x = d - m1
    if mu2 <= max(_PIVOT_EPS, _NOISE):
        # point mass at the mean
        tol = _COINCIDE_EPS + _SPREAD * np.sqrt(max(mu2, 0.0) + _NOISE)
        if x > tol:
            return 1.0, 0.0, True
        if x >= -tol:
            return 0.0, 1.0, True
        return 0.0, 0.0, True
    D22 = mu4 - mu2 * mu2 - mu3 * mu3 / mu2
    h = 0.5 * mu3 / mu2
    if D22 <= _PIVOT_EPS * mu2 + _NOISE * (1.0 + 4.0 * h * h):
        # two-point support: roots of y^2 - (mu3/mu2) y - mu2
        r = np.sqrt(h * h + mu2)
        y1 = h - r
        y2 = h + r
        w1 = y2 / (y2 - y1)
        w2 = 1.0 - w1
        # hidden third mass plus the location error of h from rounding in mu3
        tol = (_COINCIDE_EPS + _SPREAD * np.sqrt((max(D22, 0.0) + _NOISE) / mu2)
               + 4.0 * _NOISE * (1.0 + abs(h)) / mu2)
        lower = 0.0
        at = 0.0
        if y1 < x - tol:
            lower += w1
        elif y1 <= x + tol:
            at += w1
        if y2 < x - tol:
            lower += w2
        elif y2 <= x + tol:
            at += w2
        # w1 = 1/2 - h / (2 r) inherits the rounding error of h; widen both bounds by it
        dw = 4.0 * _NOISE * (1.0 + abs(h)) / (mu2 * r)
        lo = max(lower - dw, 0.0)
        hi = min(lower + at + dw, 1.0)
        return lo, hi - lo, True
    # solve H c = (1, x, x^2) with H = L D L^T, H = [[1,0,mu2],[0,mu2,mu3],[mu2,mu3,mu4]]
    L21 = mu3 / mu2
    c1 = x
    c2 = x * x - mu2 - L21 * c1
    c1 /= mu2
    c2 /= D22
    c1 -= L21 * c2
    c0 = 1.0 - c2 * mu2
    # roots of c0 + c1 y + c2 y^2 complete the support {x, y1, y2}
    if c2 == 0.0:
        return 0.0, 1.0, True
    p = c1 / c2
    q = c0 / c2
    r = np.sqrt(max(0.25 * p * p - q, 0.0))
    y1 = -0.5 * p - r
    y2 = -0.5 * p + r
    # Vandermonde solve for the weights through moments 0..2
    w0 = (mu2 + y1 * y2) / ((x - y1) * (x - y2))
    w1 = (mu2 + x * y2) / ((y1 - x) * (y1 - y2))
    w2 = (mu2 + x * y1) / ((y2 - x) * (y2 - y1))
    # roots this close to the query cannot be ordered against it in floating point;
    # their weight moves into the upper bound only
    tol = _COINCIDE_EPS + _SPREAD * np.sqrt(_NOISE / mu2)
    lower = 0.0
    at = w0
    if y1 < x - tol:
        lower += w1
    elif y1 <= x + tol:
        at += w1
    if y2 < x - tol:
        lower += w2
    elif y2 <= x + tol:
        at += w2
    return lower, at, False


@nb.njit(cache=True)
def _biased(b0, b, bias, u, out):
    for i in range(4):
        out[i] = (1.0 - bias) * (b[i] / b0) + bias * u[i]


def absorbance_bounds(pixel: MomentPixel, d: float, bias: float = DEFAULT_BIAS):
    """(lower, upper) absorbance in front of warped depth ``d``; also a singular flag."""
    if pixel.b0 <= 0.0:
        return 0.0, 0.0, False
    m = np.empty(4)
    _biased(pixel.b0, np.asarray(pixel.b, np.float64), bias, UNIFORM_MOMENTS, m)
    lower, at, singular = _bounds(m[0], m[1], m[2], m[3], float(d))
    lower = min(max(lower, 0.0), 1.0)
    upper = min(max(lower + at, lower), 1.0)
    return pixel.b0 * lower, pixel.b0 * upper, singular


def reconstruct_transmittance(pixel: MomentPixel, z_f: float, beta: float = DEFAULT_BETA,
                              bias: float = DEFAULT_BIAS, near: float = 1.0,
                              far: float = 2.0) -> float:
    """Estimated transmittance in front of view depth ``z_f``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if pixel.b0 <= 0.0:
        return 1.0
    lower, upper, _ = absorbance_bounds(pixel, warp_depth(z_f, near, far), bias)
    return float(np.exp(-(lower + beta * (upper - lower))))


@nb.njit(cache=True, error_model="numpy")
def _transmittance(b0, m, d, beta):
    lower, at, singular = _bounds(m[0], m[1], m[2], m[3], d)
    lower = min(max(lower, 0.0), 1.0)
    at = min(max(at, 0.0), 1.0 - lower)
    return np.exp(-b0 * (lower + beta * at)), singular


@nb.njit(cache=True)
def _mboit_kernel(offsets, depth, color, alpha, near, far, beta, bias, u, bg, out, b0_out):
    log_near = np.log(near)
    log_far = np.log(far)
    b = np.empty(4)
    m = np.empty(4)
    fallbacks = 0
    clamped = 0
    empty_weight = 0
    for p in range(len(offsets) - 1):
        lo = offsets[p]
        hi = offsets[p + 1]
        b0 = 0.0
        b[:] = 0.0
        for f in range(lo, hi):
            z = depth[f]
            if z < near or z > far:
                clamped += 1
                z = min(max(z, near), far)
            a = _absorb(alpha[f])
            d = _warp(z, log_near, log_far)
            dp = a
            b0 += a
            for i in range(4):
                dp *= d
                b[i] += dp
        b0_out[p] = b0
        if b0 <= 0.0:
            for c in range(3):
                out[p, c] = bg[c]
            out[p, 3] = 0.0
            continue
        _biased(b0, b, bias, u, m)
        cr = 0.0
        cg = 0.0
        cb = 0.0
        W = 0.0
        for f in range(lo, hi):
            z = min(max(depth[f], near), far)
            T, singular = _transmittance(b0, m, _warp(z, log_near, log_far), beta)
            if singular:
                fallbacks += 1
            w = T * alpha[f]
            cr += w * color[f, 0]
            cg += w * color[f, 1]
            cb += w * color[f, 2]
            W += w
        Tb = np.exp(-b0)
        if W > 0.0:
            k = (1.0 - Tb) / W
            out[p, 0] = cr * k + Tb * bg[0]
            out[p, 1] = cg * k + Tb * bg[1]
            out[p, 2] = cb * k + Tb * bg[2]
        else:
            empty_weight += 1
            for c in range(3):
                out[p, c] = bg[c]
        out[p, 3] = 1.0 - Tb
    return fallbacks, clamped, empty_weight


def mboit_render(fb: FragmentBuffer, background, beta: float = DEFAULT_BETA,
                 bias: float = DEFAULT_BIAS, near: float = 1.0, far: float = 2.0) -> Framebuffer:
    """Two-pass moment-based compositing; result does not depend on fragment order.

    ``counters["b0"]`` holds the per-pixel total absorbance image.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if not 0.0 < near < far:
        raise ValueError("need 0 < near < far")
    bg = _as_rgba(background)
    out = np.empty((fb.n_pixels, 4))
    b0 = np.empty(fb.n_pixels)
    fallbacks, clamped, empty_weight = _mboit_kernel(
        fb.offsets, fb.depth, fb.color, fb.alpha, float(near), float(far), float(beta),
        float(bias), UNIFORM_MOMENTS, bg, out, b0)
    return Framebuffer.from_flat(out, fb.width, fb.height, bg, fallbacks=int(fallbacks),
                                 clamped=int(clamped), zero_weight=int(empty_weight),
                                 b0=b0.reshape(fb.height, fb.width), fragments=fb.count)
