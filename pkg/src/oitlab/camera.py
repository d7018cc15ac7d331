"""Pinhole camera shared by the rasterizer and the ray-based renderers.

Pixel (i, j) has its sample at (i + 0.5, j + 0.5) with j = 0 the top row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Camera", "Ray", "fit_camera"]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    @classmethod
    def make(cls, origin, direction) -> "Ray":
        d = np.asarray(direction, dtype=np.float64)
        return cls(np.asarray(origin, dtype=np.float64), d / np.linalg.norm(d))

    def at(self, t):
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Camera:
    eye: tuple
    look_at: tuple
    up: tuple
    fov: float
    near: float
    far: float
    width: int
    height: int

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if not 0 < self.fov < np.pi:
            raise ValueError("fov must lie in (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValueError("viewport must be at least 1x1")
        f = np.asarray(self.look_at, float) - np.asarray(self.eye, float)
        if np.linalg.norm(f) == 0:
            raise ValueError("eye and look_at coincide")
        if np.linalg.norm(np.cross(f, np.asarray(self.up, float))) == 0:
            raise ValueError("up is parallel to the view direction")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def basis(self) -> np.ndarray:
        """Rows: right, up, forward (orthonormal, right-handed screen)."""
        eye = np.asarray(self.eye, dtype=np.float64)
        f = np.asarray(self.look_at, dtype=np.float64) - eye
        f /= np.linalg.norm(f)
        r = np.cross(f, np.asarray(self.up, dtype=np.float64))
        r /= np.linalg.norm(r)
        u = np.cross(r, f)
        return np.stack([r, u, f])

    def scale(self) -> tuple[float, float]:
        """Half-extent of the image plane at unit depth, (x, y)."""
        ty = np.tan(0.5 * self.fov)
        return ty * self.width / self.height, ty

    def to_view(self, points) -> np.ndarray:
        """World points to view space (x right, y up, z forward depth)."""
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.eye, np.float64)) @ self.basis().T

    def project(self, points) -> np.ndarray:
        """World points to (x_pixel, y_pixel, view depth)."""
        v = self.to_view(points)
        sx, sy = self.scale()
        x = (v[..., 0] / (v[..., 2] * sx) * 0.5 + 0.5) * self.width
        y = (0.5 - v[..., 1] / (v[..., 2] * sy) * 0.5) * self.height
        return np.stack([x, y, v[..., 2]], axis=-1)

    def ray_directions(self) -> np.ndarray:
        """Unit primary-ray directions for all pixel centers, (H, W, 3)."""
        sx, sy = self.scale()
        px = (2.0 * (np.arange(self.width) + 0.5) / self.width - 1.0) * sx
        py = (1.0 - 2.0 * (np.arange(self.height) + 0.5) / self.height) * sy
        r, u, f = self.basis()
        d = (f[None, None, :] + px[None, :, None] * r[None, None, :]
             + py[:, None, None] * u[None, None, :])
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def primary_ray(self, i: int, j: int) -> Ray:
        return Ray(np.asarray(self.eye, np.float64), self.ray_directions()[j, i])

    def with_viewport(self, width: int, height: int) -> "Camera":
        return Camera(self.eye, self.look_at, self.up, self.fov, self.near, self.far, width, height)


def fit_camera(lo, hi, width: int, height: int, direction=(0.3, -1.0, 0.45),
               fov: float = np.radians(40.0), zoom: float = 1.0, up=(0.0, 0.0, 1.0)) -> Camera:
    """Camera looking at the box [lo, hi] from ``direction`` with tight clip planes."""
    lo = np.asarray(lo, np.float64)
    hi = np.asarray(hi, np.float64)
    center = 0.5 * (lo + hi)
    radius = 0.5 * np.linalg.norm(hi - lo)
    d = np.asarray(direction, np.float64)
    d /= np.linalg.norm(d)
    half = 0.5 * fov * min(1.0, width / height)
    dist = radius / np.sin(half) / zoom
    eye = center - d * dist
    near = max(dist - 1.05 * radius, 0.02 * dist)
    far = dist + 1.05 * radius
    return Camera(tuple(eye), tuple(center), tuple(up), float(fov), float(near), float(far),
                  int(width), int(height))
