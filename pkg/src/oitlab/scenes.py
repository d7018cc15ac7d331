"""Transparency regimes and ready-made test scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .geometry import LineSet, TransferFunction, TriMesh, generate_tube_mesh, synth_lineset

__all__ = [
    "REGIMES",
    "CONSTANT_LOW_ALPHA",
    "DEFAULT_LINES",
    "regime_tf",
    "Scene",
    "synthetic_scene",
    "empty_lineset",
    "adversarial_scene",
]

REGIMES = ("opaque", "semi", "constant-low")
CONSTANT_LOW_ALPHA = 0.1
DEFAULT_LINES = {"grid-rods": 16, "helix-bundle": 200, "vortex-streamlines": 500}

# cool-to-warm color ramp shared by every regime
_RAMP_T = np.array([0.0, 0.5, 1.0])
_RAMP_RGB = np.array([[0.23, 0.30, 0.75], [0.87, 0.87, 0.87], [0.71, 0.02, 0.15]])


def _ramp(t):
    return np.stack([np.interp(t, _RAMP_T, _RAMP_RGB[:, c]) for c in range(3)], axis=-1)


def regime_tf(regime: str) -> TransferFunction:
    """Transfer function template for a transparency regime.

    ``semi`` keeps low attribute values faint and renders the top of the
    range (attribute >= 0.75) fully opaque.
    """
    if regime == "opaque":
        t = np.linspace(0.0, 1.0, 5)
        alpha = np.ones_like(t)
    elif regime == "semi":
        t = np.array([0.0, 0.3, 0.6, 0.75, 1.0])
        alpha = np.array([0.04, 0.06, 0.12, 1.0, 1.0])
    elif regime == "constant-low":
        t = np.linspace(0.0, 1.0, 5)
        alpha = np.full_like(t, CONSTANT_LOW_ALPHA)
    else:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    return TransferFunction(t, np.column_stack([_ramp(t), alpha]))


@dataclass
class Scene:
    lineset: LineSet
    radius: float
    mesh: TriMesh
    tf: TransferFunction | None = None
    camera: Camera | None = None

    def bounds(self):
        if not self.lineset.polylines:
            return -np.ones(3), np.ones(3)
        lo, hi = self.lineset.bounds()
        return lo - self.radius, hi + self.radius


def empty_lineset() -> LineSet:
    return LineSet(np.zeros((0, 3)), np.zeros(0), [])


def synthetic_scene(kind: str, seed: int = 0, n_lines: int | None = None, n_verts: int = 64,
                    radius: float = 0.02, regime: str | None = None) -> Scene:
    if kind == "empty":
        ls = empty_lineset()
    else:
        ls = synth_lineset(kind, seed, DEFAULT_LINES.get(kind, 100) if n_lines is None else n_lines,
                           n_verts)
    tf = regime_tf(regime) if regime else None
    return Scene(ls, radius, generate_tube_mesh(ls, radius), tf)


def _rods(axis: int, fixed: dict, coords, span=(-1.0, 1.0), n_verts=8):
    """Straight lines parallel to ``axis`` placed at the given cross coordinates."""
    pts = []
    s = np.linspace(span[0], span[1], n_verts)
    for c in coords:
        p = np.zeros((n_verts, 3))
        p[:, axis] = s
        for k, v in {**fixed, **c}.items():
            p[:, k] = v
        pts.append(p)
    return pts


def adversarial_scene(width: int = 160, height: int = 120, radius: float = 0.05,
                      front_layers: int = 4) -> Scene:
    """Transparent interior lines hidden behind an opaque wall.

    Submission order is chosen against multi-layer blending: the interior
    lines come first, farthest first, then ``front_layers`` sheets of
    identical faint tubes in front of the wall, and the wall itself last.
    Attributes: 0 interior, 0.5 front sheets, 1 wall.
    """
    spacing = 1.8 * radius
    zs = np.arange(-1.0, 1.0 + 1e-9, spacing)
    xs = np.arange(-1.0, 1.0 + 1e-9, 2.5 * radius)
    groups = []
    # interior: vertical rods on several sheets behind the wall (y > 0), far sheets first
    for y in np.linspace(0.9, 0.3, 6):
        shift = (y * 7.0) % 1.0 * 2.5 * radius
        groups.append((_rods(2, {1: y}, [{0: x + shift} for x in xs]), 0.0))
    for y in -0.4 - 0.15 * np.arange(front_layers):
        groups.append((_rods(0, {1: y}, [{2: z} for z in zs + 0.5 * spacing]), 0.5))
    groups.append((_rods(0, {1: 0.0}, [{2: z} for z in zs]), 1.0))

    pts, att, lines = [], [], []
    n = 0
    for rods, a in groups:
        for p in rods:
            pts.append(p)
            att.append(np.full(len(p), a))
            lines.append(np.arange(n, n + len(p)))
            n += len(p)
    ls = LineSet(np.concatenate(pts), np.concatenate(att), lines)
    tf = TransferFunction([0.0, 0.5, 1.0], [[1.0, 0.1, 0.8, 0.9],
                                            [0.3, 0.6, 0.9, 0.15],
                                            [0.9, 0.9, 0.8, 1.0]])
    cam = Camera((0.0, -3.5, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), float(np.radians(30.0)),
                 1.5, 5.0, int(width), int(height))
    return Scene(ls, radius, generate_tube_mesh(ls, radius), tf, cam)
