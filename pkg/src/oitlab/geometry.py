"""Line sets, transfer functions and tube triangulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "GeometryError",
    "LineSet",
    "TransferFunction",
    "TriMesh",
    "load_lineset",
    "save_lineset",
    "synth_lineset",
    "average_tangent",
    "generate_tube_mesh",
    "apply_transfer",
]

SYNTH_KINDS = ("helix-bundle", "vortex-streamlines", "grid-rods")


class GeometryError(ValueError):
    """Raised for malformed or degenerate line geometry."""


@dataclass
class LineSet:
    """Polylines over a shared vertex pool.

    ``positions`` is (N, 3), ``attributes`` is (N,) in [0, 1] and each entry
    of ``polylines`` is an integer array of zero-based vertex indices.
    """

    positions: np.ndarray
    attributes: np.ndarray
    polylines: list[np.ndarray]

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.attributes = np.ascontiguousarray(self.attributes, dtype=np.float64).reshape(-1)
        self.polylines = [np.asarray(p, dtype=np.int64) for p in self.polylines]
        self.validate()

    def validate(self):
        n = len(self.positions)
        if len(self.attributes) != n:
            raise GeometryError("positions and attributes differ in length")
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("non-finite vertex position")
        if n and (self.attributes.min() < 0.0 or self.attributes.max() > 1.0):
            raise GeometryError("attribute outside [0, 1]")
        for i, line in enumerate(self.polylines):
            if len(line) < 2:
                raise GeometryError(f"polyline {i} has fewer than 2 vertices")
            if line.min() < 0 or line.max() >= n:
                raise GeometryError(f"polyline {i} references a vertex out of range")
            seg = np.diff(self.positions[line], axis=0)
            if np.any(np.einsum("ij,ij->i", seg, seg) == 0.0):
                raise GeometryError(f"polyline {i} has a zero-length segment")

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """All polyline segments as (p0, p1, a0, a1, line_id) arrays."""
        i0 = np.concatenate([p[:-1] for p in self.polylines]) if self.polylines else np.zeros(0, np.int64)
        i1 = np.concatenate([p[1:] for p in self.polylines]) if self.polylines else np.zeros(0, np.int64)
        line_id = np.concatenate(
            [np.full(len(p) - 1, k, dtype=np.int64) for k, p in enumerate(self.polylines)]
        ) if self.polylines else np.zeros(0, np.int64)
        return (self.positions[i0], self.positions[i1],
                self.attributes[i0], self.attributes[i1], line_id)


@dataclass
class TransferFunction:
    """Piecewise-linear map from attribute in [0, 1] to straight RGBA."""

    t: np.ndarray
    rgba: np.ndarray

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=np.float64).reshape(-1)
        self.rgba = np.ascontiguousarray(self.rgba, dtype=np.float64).reshape(-1, 4)
        if len(self.t) < 2 or len(self.t) != len(self.rgba):
            raise ValueError("need at least two control points with matching RGBA rows")
        if self.t[0] != 0.0 or self.t[-1] != 1.0 or np.any(np.diff(self.t) <= 0):
            raise ValueError("control points must increase strictly from t=0 to t=1")
        if self.rgba.min() < 0.0 or self.rgba.max() > 1.0:
            raise ValueError("RGBA channels must lie in [0, 1]")

    @classmethod
    def constant(cls, rgba) -> "TransferFunction":
        rgba = np.asarray(rgba, dtype=np.float64)
        return cls([0.0, 1.0], [rgba, rgba])

    def __call__(self, attribute):
        return apply_transfer(self, attribute)

    @property
    def max_alpha(self) -> float:
        return float(self.rgba[:, 3].max())


def apply_transfer(tf: TransferFunction, attribute):
    """Evaluate ``tf`` at ``attribute`` (scalar or array); returns (..., 4)."""
    a = np.clip(np.asarray(attribute, dtype=np.float64), 0.0, 1.0)
    out = np.stack([np.interp(a, tf.t, tf.rgba[:, c]) for c in range(4)], axis=-1)
    return np.clip(out, 0.0, 1.0)


@dataclass
class TriMesh:
    positions: np.ndarray
    normals: np.ndarray
    attributes: np.ndarray
    triangles: np.ndarray
    tube_of_triangle: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.attributes = np.ascontiguousarray(self.attributes, dtype=np.float64).reshape(-1)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.tube_of_triangle is None:
            self.tube_of_triangle = np.zeros(len(self.triangles), dtype=np.int64)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.positions)):
            raise GeometryError("triangle index out of range")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def subset(self, triangle_order) -> "TriMesh":
        """Same vertices, triangles resubmitted in ``triangle_order``."""
        order = np.asarray(triangle_order, dtype=np.int64)
        return TriMesh(self.positions, self.normals, self.attributes,
                       self.triangles[order], self.tube_of_triangle[order])

    @classmethod
    def concatenate(cls, meshes) -> "TriMesh":
        pos, nrm, att, tri, tube = [], [], [], [], []
        v_off = 0
        t_off = 0
        for m in meshes:
            pos.append(m.positions)
            nrm.append(m.normals)
            att.append(m.attributes)
            tri.append(m.triangles + v_off)
            tube.append(m.tube_of_triangle + t_off)
            v_off += len(m.positions)
            t_off += (m.tube_of_triangle.max() + 1) if len(m.tube_of_triangle) else 0
        return cls(np.concatenate(pos), np.concatenate(nrm), np.concatenate(att),
                   np.concatenate(tri), np.concatenate(tube))


# --------------------------------------------------------------------------
# file I/O


def load_lineset(path) -> LineSet:
    """Parse the ASCII ``v x y z a`` / ``l i1 i2 ...`` line-set format."""
    positions, attributes, polylines = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].split()
            if not text:
                continue
            tag, args = text[0], text[1:]
            try:
                if tag == "v":
                    if len(args) != 4:
                        raise ValueError("vertex record needs 4 numbers")
                    x, y, z, a = (float(s) for s in args)
                    if not 0.0 <= a <= 1.0:
                        raise GeometryError(f"line {lineno}: attribute {a} outside [0, 1]")
                    positions.append((x, y, z))
                    attributes.append(a)
                elif tag == "l":
                    idx = [int(s) for s in args]
                    if len(idx) < 2:
                        raise ValueError("polyline needs at least 2 indices")
                    if min(idx) < 1:
                        raise GeometryError(f"line {lineno}: vertex index out of range")
                    polylines.append(np.asarray(idx, dtype=np.int64) - 1)
                else:
                    raise ValueError(f"unknown record {tag!r}")
            except GeometryError:
                raise
            except ValueError as exc:
                raise GeometryError(f"line {lineno}: {exc}") from None
    n = len(positions)
    for k, line in enumerate(polylines):
        if line.max() >= n:
            raise GeometryError(f"polyline {k}: vertex index {line.max() + 1} out of range (have {n})")
    return LineSet(np.asarray(positions, dtype=np.float64).reshape(-1, 3),
                   np.asarray(attributes, dtype=np.float64), polylines)


def save_lineset(lineset: LineSet, path) -> None:
    lines = []
    for p, a in zip(lineset.positions, lineset.attributes):
        lines.append("v %r %r %r %r" % (float(p[0]), float(p[1]), float(p[2]), float(a)))
    for poly in lineset.polylines:
        lines.append("l " + " ".join(str(int(i) + 1) for i in poly))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# --------------------------------------------------------------------------
# synthetic scenes


def synth_lineset(kind: str, seed: int, n_lines: int, n_verts: int) -> LineSet:
    """Deterministic synthetic line set fitted into the cube [-1, 1]^3."""
    if n_lines < 1 or n_verts < 2:
        raise ValueError("need n_lines >= 1 and n_verts >= 2")
    rng = np.random.default_rng(seed)
    if kind == "grid-rods":
        pts, att = _grid_rods(rng, n_lines, n_verts)
    elif kind == "helix-bundle":
        pts, att = _helix_bundle(rng, n_lines, n_verts)
    elif kind == "vortex-streamlines":
        pts, att = _vortex_streamlines(rng, n_lines, n_verts)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    polylines = [np.arange(i * n_verts, (i + 1) * n_verts) for i in range(n_lines)]
    return LineSet(pts.reshape(-1, 3), np.clip(att.reshape(-1), 0.0, 1.0), polylines)


def _grid_rods(rng, n_lines, n_verts):
    side = int(np.ceil(np.sqrt(n_lines)))
    k = np.arange(n_lines)
    gy = (k % side) - (side - 1) / 2.0
    gz = (k // side) - (side - 1) / 2.0
    spacing = 1.6 / max(side, 1)
    x = np.linspace(-0.9, 0.9, n_verts)
    pts = np.empty((n_lines, n_verts, 3))
    pts[:, :, 0] = x[None, :]
    pts[:, :, 1] = (gy * spacing)[:, None]
    pts[:, :, 2] = (gz * spacing)[:, None]
    per_line = rng.uniform(0.0, 1.0, size=n_lines)
    att = np.repeat(per_line[:, None], n_verts, axis=1)
    return pts, att


def _helix_bundle(rng, n_lines, n_verts):
    radius = rng.uniform(0.15, 0.8, size=n_lines)
    phase = rng.uniform(0.0, 2 * np.pi, size=n_lines)
    turns = rng.uniform(0.75, 1.5, size=n_lines)
    z0 = rng.uniform(-0.95, -0.7, size=n_lines)
    z1 = rng.uniform(0.7, 0.95, size=n_lines)
    s = np.linspace(0.0, 1.0, n_verts)
    theta = phase[:, None] + 2 * np.pi * turns[:, None] * s[None, :]
    pts = np.empty((n_lines, n_verts, 3))
    pts[:, :, 0] = radius[:, None] * np.cos(theta)
    pts[:, :, 1] = radius[:, None] * np.sin(theta)
    pts[:, :, 2] = z0[:, None] + (z1 - z0)[:, None] * s[None, :]
    # inner strands carry high attribute values, modulated along the strand
    core = 1.0 - (radius - 0.15) / 0.65
    att = np.clip(core[:, None] * (0.75 + 0.25 * np.sin(np.pi * s)[None, :]), 0.0, 1.0)
    return pts, att


def _vortex_velocity(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r2 = x * x + y * y
    swirl = 1.5 * np.exp(-r2 / 0.3)
    v = np.stack([-y * swirl - 0.3 * x, x * swirl - 0.3 * y, 0.6 + 0.3 * np.cos(2.0 * z)], axis=-1)
    return v, swirl


def _unit_velocity(p):
    v, _ = _vortex_velocity(p)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _vortex_streamlines(rng, n_lines, n_verts):
    seeds = np.empty((n_lines, 3))
    rad = 0.9 * np.sqrt(rng.uniform(0.0, 1.0, size=n_lines))
    ang = rng.uniform(0.0, 2 * np.pi, size=n_lines)
    seeds[:, 0] = rad * np.cos(ang)
    seeds[:, 1] = rad * np.sin(ang)
    seeds[:, 2] = rng.uniform(-1.0, -0.2, size=n_lines)
    step = 1.4 / (n_verts - 1)
    pts = np.empty((n_lines, n_verts, 3))
    mag = np.empty((n_lines, n_verts))
    p = seeds.copy()
    for i in range(n_verts):
        pts[:, i] = p
        _, mag[:, i] = _vortex_velocity(p)
        k1 = _unit_velocity(p)
        k2 = _unit_velocity(p + 0.5 * step * k1)
        k3 = _unit_velocity(p + 0.5 * step * k2)
        k4 = _unit_velocity(p + step * k3)
        p = p + step * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    lo, hi = pts.reshape(-1, 3).min(axis=0), pts.reshape(-1, 3).max(axis=0)
    center = 0.5 * (lo + hi)
    scale = 1.8 / np.max(hi - lo)
    pts = (pts - center) * scale
    att = mag / 1.5
    return pts, att


# --------------------------------------------------------------------------
# tubes


def _polyline_tangents(pts: np.ndarray) -> np.ndarray:
    seg = np.diff(pts, axis=0)
    length = np.linalg.norm(seg, axis=1)
    if np.any(length == 0.0):
        raise GeometryError("zero-length segment")
    d = seg / length[:, None]
    tan = np.empty_like(pts)
    tan[0] = d[0]
    tan[-1] = d[-1]
    tan[1:-1] = d[:-1] + d[1:]
    norm = np.linalg.norm(tan, axis=1)
    if np.any(norm < 1e-12):
        raise GeometryError("degenerate tangent at a polyline reversal")
    return tan / norm[:, None]


def average_tangent(lineset: LineSet, polyline: int, vertex: int) -> np.ndarray:
    """Unit tangent at ``vertex`` (position within the polyline).

    Interior vertices average the directions of their two segments; end
    vertices use their single segment.
    """
    line = lineset.polylines[polyline]
    if not 0 <= vertex < len(line):
        raise IndexError("vertex not on polyline")
    return _polyline_tangents(lineset.positions[line])[vertex]


def _transport_frames(tangents: np.ndarray) -> np.ndarray:
    """Rotation-minimizing reference normals along a polyline."""
    n = len(tangents)
    normals = np.empty_like(tangents)
    t0 = tangents[0]
    axis = np.zeros(3)
    axis[np.argmin(np.abs(t0))] = 1.0
    v = axis - np.dot(axis, t0) * t0
    normals[0] = v / np.linalg.norm(v)
    for i in range(1, n):
        a, b = tangents[i - 1], tangents[i]
        prev = normals[i - 1]
        c = np.cross(a, b)
        s = np.linalg.norm(c)
        cos = np.dot(a, b)
        if s > 1e-12:
            k = c / s
            # Rodrigues rotation taking a onto b
            prev = prev * cos + np.cross(k, prev) * s + k * np.dot(k, prev) * (1.0 - cos)
        v = prev - np.dot(prev, b) * b
        normals[i] = v / np.linalg.norm(v)
    return normals


def generate_tube_mesh(lineset: LineSet, radius: float) -> TriMesh:
    """Closed three-sided tubes around every polyline.

    Each polyline vertex gets a ring of three vertices orthogonal to its
    averaged tangent; consecutive rings are stitched with six triangles and
    each end is capped by one triangle.  Ring offsets double as normals.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    angles = 2.0 * np.pi * np.arange(3) / 3.0
    cos, sin = np.cos(angles), np.sin(angles)
    pos, nrm, att, tris, tube = [], [], [], [], []
    v_off = 0
    for k, line in enumerate(lineset.polylines):
        pts = lineset.positions[line]
        n = len(pts)
        tan = _polyline_tangents(pts)
        n0 = _transport_frames(tan)
        b0 = np.cross(tan, n0)
        ring_dir = cos[None, :, None] * n0[:, None, :] + sin[None, :, None] * b0[:, None, :]
        ring_dir /= np.linalg.norm(ring_dir, axis=2, keepdims=True)
        pos.append((pts[:, None, :] + radius * ring_dir).reshape(-1, 3))
        nrm.append(ring_dir.reshape(-1, 3))
        att.append(np.repeat(lineset.attributes[line], 3))

        i = np.arange(n - 1)[:, None]
        j = np.arange(3)[None, :]
        a = v_off + 3 * i + j
        b = v_off + 3 * i + (j + 1) % 3
        c = a + 3
        d = b + 3
        side = np.stack([np.stack([a, b, d], -1), np.stack([a, d, c], -1)], axis=2).reshape(-1, 3)
        caps = np.array([[v_off, v_off + 2, v_off + 1],
                         [v_off + 3 * (n - 1), v_off + 3 * (n - 1) + 1, v_off + 3 * (n - 1) + 2]])
        tris.append(np.concatenate([side, caps]))
        tube.append(np.full(len(side) + 2, k, dtype=np.int64))
        v_off += 3 * n
    if not tris:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3), np.int64))
    return TriMesh(np.concatenate(pos), np.concatenate(nrm), np.concatenate(att),
                   np.concatenate(tris), np.concatenate(tube))
