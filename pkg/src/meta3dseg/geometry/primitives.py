"""Analytic solid primitives: inside tests, signed distances, area-uniform surface samples."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _axes(axis: int) -> tuple[int, int, int]:
    """(axial, u, v) coordinate indices for a primitive aligned with ``axis``."""
    return axis, (axis + 1) % 3, (axis + 2) % 3


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half: tuple[float, float, float]

    def contains(self, p: np.ndarray, margin: float = 0.0) -> np.ndarray:
        d = np.abs(p - np.asarray(self.center))
        return np.all(d <= np.asarray(self.half) - margin, axis=-1)

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q = np.abs(p - np.asarray(self.center)) - np.asarray(self.half)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0)

    def area(self) -> float:
        hx, hy, hz = self.half
        return 8.0 * (hx * hy + hy * hz + hx * hz)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c, h = np.asarray(self.center), np.asarray(self.half)
        return c - h, c + h

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        h = np.asarray(self.half)
        # faces normal to axis a have area 4 * h[b] * h[c]
        face_area = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        axis = rng.choice(3, size=n, p=face_area / face_area.sum())
        sign = rng.choice([-1.0, 1.0], size=n)
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
        pts[np.arange(n), axis] = sign * h[axis]
        return pts + np.asarray(self.center)


@dataclass(frozen=True)
class Cylinder:
    center: tuple[float, float, float]
    radius: float
    half_height: float
    axis: int = 1

    def _local(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, u, v = _axes(self.axis)
        d = p - np.asarray(self.center)
        return np.hypot(d[..., u], d[..., v]), d[..., a]

    def contains(self, p: np.ndarray, margin: float = 0.0) -> np.ndarray:
        r, h = self._local(p)
        return (r <= self.radius - margin) & (np.abs(h) <= self.half_height - margin)

    def sdf(self, p: np.ndarray) -> np.ndarray:
        r, h = self._local(p)
        q = np.stack([r - self.radius, np.abs(h) - self.half_height], axis=-1)
        return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)

    def area(self) -> float:
        return 2.0 * math.pi * self.radius * (2.0 * self.half_height) + 2.0 * math.pi * self.radius ** 2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        ext = np.full(3, self.radius)
        ext[self.axis] = self.half_height
        c = np.asarray(self.center)
        return c - ext, c + ext

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        a, u, v = _axes(self.axis)
        side = 4.0 * math.pi * self.radius * self.half_height
        cap = math.pi * self.radius ** 2
        on_side = rng.random(n) < side / (side + 2.0 * cap)
        theta = rng.uniform(0.0, 2.0 * math.pi, n)
        rad = np.where(on_side, self.radius, self.radius * np.sqrt(rng.random(n)))
        axial = np.where(on_side, rng.uniform(-self.half_height, self.half_height, n),
                         rng.choice([-1.0, 1.0], size=n) * self.half_height)
        pts = np.empty((n, 3))
        pts[:, a] = axial
        pts[:, u] = rad * np.cos(theta)
        pts[:, v] = rad * np.sin(theta)
        return pts + np.asarray(self.center)


@dataclass(frozen=True)
class Torus:
    """Ring of tube radius ``minor`` around a circle of radius ``major``; ``axis`` is the symmetry axis."""

    center: tuple[float, float, float]
    major: float
    minor: float
    axis: int = 2

    def _local(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, u, v = _axes(self.axis)
        d = p - np.asarray(self.center)
        return np.hypot(d[..., u], d[..., v]) - self.major, d[..., a]

    def contains(self, p: np.ndarray, margin: float = 0.0) -> np.ndarray:
        q, h = self._local(p)
        return q * q + h * h <= (self.minor - margin) ** 2

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q, h = self._local(p)
        return np.hypot(q, h) - self.minor

    def area(self) -> float:
        return 4.0 * math.pi ** 2 * self.major * self.minor

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        ext = np.full(3, self.major + self.minor)
        ext[self.axis] = self.minor
        c = np.asarray(self.center)
        return c - ext, c + ext

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        a, u, v = _axes(self.axis)
        out = np.empty((0, 3))
        while len(out) < n:
            m = 2 * (n - len(out)) + 8
            phi = rng.uniform(0.0, 2.0 * math.pi, m)
            keep = rng.random(m) * (self.major + self.minor) <= self.major + self.minor * np.cos(phi)
            phi = phi[keep]
            theta = rng.uniform(0.0, 2.0 * math.pi, len(phi))
            ring = self.major + self.minor * np.cos(phi)
            pts = np.empty((len(phi), 3))
            pts[:, u] = ring * np.cos(theta)
            pts[:, v] = ring * np.sin(theta)
            pts[:, a] = self.minor * np.sin(phi)
            out = np.concatenate([out, pts])
        return out[:n] + np.asarray(self.center)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def contains(self, p: np.ndarray, margin: float = 0.0) -> np.ndarray:
        d = p - np.asarray(self.center)
        return np.einsum("...i,...i->...", d, d) <= (self.radius - margin) ** 2

    def sdf(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(p - np.asarray(self.center), axis=-1) - self.radius

    def area(self) -> float:
        return 4.0 * math.pi * self.radius ** 2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * self.radius + np.asarray(self.center)


Primitive = Box | Cylinder | Torus | Sphere
