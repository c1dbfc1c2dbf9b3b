"""Procedural labeled shapes, voxelization and point sampling.

Every shape lives in the cube ``[-0.5, 0.5]^3`` with +y up.  A shape is a
list of parts, each part a union of analytic primitives.  Where parts overlap
the lowest part index wins.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .primitives import Box, Cylinder, Primitive, Torus

FLOOR = -0.45

# Per-category parameter ranges (inclusive).  Draw order is the key order here.
PARAM_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "table": {
        "top_height": (0.30, 0.48),
        "top_thickness": (0.07, 0.12),
        "top_half_x": (0.30, 0.42),
        "top_half_z": (0.22, 0.40),
        "leg_radius": (0.05, 0.08),
        "leg_inset": (0.00, 0.06),
    },
    "chair": {
        "seat_height": (-0.10, 0.05),
        "seat_thickness": (0.07, 0.11),
        "seat_half_x": (0.24, 0.34),
        "seat_half_z": (0.24, 0.34),
        "back_top": (0.30, 0.45),
        "back_thickness": (0.07, 0.10),
        "leg_radius": (0.045, 0.07),
    },
    "mug": {
        "body_radius": (0.22, 0.30),
        "body_half_height": (0.25, 0.38),
        "handle_major": (0.12, 0.17),
        "handle_minor": (0.05, 0.07),
    },
    "airplane_toy": {
        "fuselage_radius": (0.06, 0.09),
        "fuselage_half_length": (0.36, 0.44),
        "wing_half_span": (0.30, 0.44),
        "wing_half_chord": (0.07, 0.12),
        "wing_half_thickness": (0.035, 0.05),
        "wing_offset": (-0.05, 0.10),
        "tail_height": (0.12, 0.20),
        "tail_half_span": (0.10, 0.18),
    },
}

PART_NAMES: dict[str, list[str]] = {
    "table": ["top", "legs"],
    "chair": ["seat", "back", "legs"],
    "mug": ["body", "handle"],
    "airplane_toy": ["fuselage", "wings", "tail"],
}

CATEGORIES = tuple(PART_NAMES)


class GeometryError(ValueError):
    pass


@dataclass
class LabeledShape:
    category: str
    part_names: list[str]
    parts: list[list[Primitive]]
    seed: int = 0
    params: dict[str, float] = field(default_factory=dict)

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def part_sdf(self, points: np.ndarray) -> np.ndarray:
        """Signed distance to each part, shape ``[N, n_parts]``."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cols = [np.min([p.sdf(points) for p in prims], axis=0) if prims else np.full(len(points), np.inf)
                for prims in self.parts]
        return np.stack(cols, axis=1) if cols else np.empty((len(points), 0))

    def part_contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cols = [np.any([p.contains(points) for p in prims], axis=0) if prims
                else np.zeros(len(points), dtype=bool) for prims in self.parts]
        return np.stack(cols, axis=1) if cols else np.zeros((len(points), 0), dtype=bool)

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        """Analytic inside test: union of all part predicates."""
        return self.part_contains(points).any(axis=1)

    def part_labels(self, points: np.ndarray) -> np.ndarray:
        """Lowest index of a part containing each point, or -1 for outside points."""
        inside = self.part_contains(points)
        return np.where(inside.any(axis=1), np.argmax(inside, axis=1), -1)

    def label_points(self, points: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        """Labels for (near-)surface points: lowest containing part, else nearest part."""
        d = self.part_sdf(points)
        near = d <= tol
        return np.where(near.any(axis=1), np.argmax(near, axis=1), np.argmin(d, axis=1))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not any(self.parts):
            return np.zeros(3), np.zeros(3)
        lo = np.min([p.bounds()[0] for prims in self.parts for p in prims], axis=0)
        hi = np.max([p.bounds()[1] for prims in self.parts for p in prims], axis=0)
        return lo, hi


def _draw_params(category: str, seed: int, given: Mapping[str, float] | None) -> dict[str, float]:
    ranges = PARAM_RANGES[category]
    given = dict(given or {})
    unknown = sorted(set(given) - set(ranges))
    if unknown:
        raise GeometryError(f"unknown {category} parameters: {', '.join(unknown)}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, (lo, hi) in ranges.items():
        drawn = float(rng.uniform(lo, hi))
        value = float(given.get(name, drawn))
        if not lo <= value <= hi:
            raise GeometryError(f"{category}.{name}={value} outside documented range [{lo}, {hi}]")
        params[name] = value
    return params


def _legs(xs: Sequence[float], zs: Sequence[float], radius: float, bottom: float, top: float) -> list[Cylinder]:
    hh = (top - bottom) / 2.0
    yc = (top + bottom) / 2.0
    return [Cylinder((x, yc, z), radius, hh, axis=1) for x in xs for z in zs]


def _table(p: dict[str, float]) -> list[list[Primitive]]:
    top_y, t = p["top_height"], p["top_thickness"]
    ax, az = p["top_half_x"], p["top_half_z"]
    r, inset = p["leg_radius"], p["leg_inset"]
    slab = Box((0.0, top_y - t / 2.0, 0.0), (ax, t / 2.0, az))
    lx, lz = ax - inset - r, az - inset - r
    # legs end mid-slab so the junction is a clean overlap rather than coincident faces
    return [[slab], _legs((-lx, lx), (-lz, lz), r, FLOOR, top_y - t / 2.0)]


def _chair(p: dict[str, float]) -> list[list[Primitive]]:
    sy, st = p["seat_height"], p["seat_thickness"]
    ax, az = p["seat_half_x"], p["seat_half_z"]
    bt, r = p["back_thickness"], p["leg_radius"]
    seat = Box((0.0, sy - st / 2.0, 0.0), (ax, st / 2.0, az))
    back_bottom = sy - st
    back = Box((0.0, (p["back_top"] + back_bottom) / 2.0, -az + bt / 2.0),
               (ax, (p["back_top"] - back_bottom) / 2.0, bt / 2.0))
    lx, lz = ax - r, az - r
    return [[seat], [back], _legs((-lx, lx), (-lz, lz), r, FLOOR, sy - st / 2.0)]


def _mug(p: dict[str, float]) -> list[list[Primitive]]:
    r, hh = p["body_radius"], p["body_half_height"]
    big, small = p["handle_major"], p["handle_minor"]
    cx = -(big + small) / 2.0
    body = Cylinder((cx, 0.0, 0.0), r, hh, axis=1)
    handle = Torus((cx + r, 0.0, 0.0), big, small, axis=2)
    return [[body], [handle]]


def _airplane_toy(p: dict[str, float]) -> list[list[Primitive]]:
    fr, fl = p["fuselage_radius"], p["fuselage_half_length"]
    fuselage = Cylinder((0.0, 0.0, 0.0), fr, fl, axis=0)
    wings = Box((p["wing_offset"], 0.0, 0.0),
                (p["wing_half_chord"], p["wing_half_thickness"], p["wing_half_span"]))
    tail_x = -fl + 0.06
    fin = Box((tail_x, (p["tail_height"]) / 2.0, 0.0), (0.05, p["tail_height"] / 2.0, 0.025))
    stab = Box((tail_x, 0.0, 0.0), (0.05, 0.03, p["tail_half_span"]))
    return [[fuselage], [wings], [fin, stab]]


_BUILDERS = {"table": _table, "chair": _chair, "mug": _mug, "airplane_toy": _airplane_toy}


def generate_shape(category: str, seed: int, params: Mapping[str, float] | None = None) -> LabeledShape:
    """Build a shape of ``category``; parameters not given are drawn from ``seed``."""
    if category not in _BUILDERS:
        raise GeometryError(f"unknown category {category!r}; expected one of {', '.join(CATEGORIES)}")
    full = _draw_params(category, seed, params)
    shape = LabeledShape(category, list(PART_NAMES[category]), _BUILDERS[category](full), int(seed), full)
    lo, hi = shape.bounds()
    if np.any(lo < -0.5) or np.any(hi > 0.5):
        raise GeometryError(f"{category} seed {seed} does not fit the unit cube")
    return shape


# --- grids and samples --------------------------------------------------------

@dataclass
class OccupancyGrid:
    resolution: int
    values: np.ndarray  # uint8 [R, R, R], indexed (x, y, z)

    def centers(self) -> np.ndarray:
        return cell_centers(self.resolution)

    @property
    def n_inside(self) -> int:
        return int(self.values.sum())


def cell_centers(resolution: int) -> np.ndarray:
    c = (np.arange(resolution) + 0.5) / resolution - 0.5
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([x, y, z], axis=-1).reshape(-1, 3)


def voxelize(shape: LabeledShape, resolution: int) -> OccupancyGrid:
    if resolution < 2:
        raise GeometryError(f"resolution must be >= 2, got {resolution}")
    occ = shape.occupancy(cell_centers(resolution))
    return OccupancyGrid(resolution, occ.reshape((resolution,) * 3).astype(np.uint8))


@dataclass
class PointCloud:
    points: np.ndarray  # float32 [N, 3]
    labels: np.ndarray | None = None  # int64 [N]

    def __len__(self) -> int:
        return len(self.points)


def sample_surface_points(shape: LabeledShape, n: int, seed: int) -> PointCloud:
    """``n`` area-uniform points on the boundary of the union of parts.

    Candidates are drawn on every primitive's surface in proportion to its
    area; candidates that fall strictly inside another primitive are rejected.
    """
    if n < 1:
        raise GeometryError(f"need n >= 1 points, got {n}")
    prims = [p for part in shape.parts for p in part]
    areas = np.array([p.area() for p in prims])
    if len(prims) == 0 or areas.sum() <= 0.0:
        raise GeometryError("degenerate shape with zero volume")
    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    total = 0
    for _ in range(1000):
        m = 2 * (n - total) + 64
        which = rng.choice(len(prims), size=m, p=areas / areas.sum())
        cand = np.empty((m, 3))
        for i, prim in enumerate(prims):
            sel = which == i
            if sel.any():
                cand[sel] = prim.sample_surface(int(sel.sum()), rng)
        buried = np.zeros(m, dtype=bool)
        for i, prim in enumerate(prims):
            buried |= prim.contains(cand, margin=1e-7) & (which != i)
        cand = cand[~buried]
        accepted.append(cand)
        total += len(cand)
        if total >= n:
            break
    else:
        raise GeometryError("degenerate shape: surface sampling found no exposed boundary")
    pts = np.concatenate(accepted)[:n].astype(np.float32)
    return PointCloud(pts, shape.label_points(pts.astype(np.float64)).astype(np.int64))


@dataclass
class OccupancySamples:
    """Grid-cell-center training samples; ``labels`` is 1 inside (X) and 0 outside (X')."""

    points: np.ndarray  # [R^3, 3]
    labels: np.ndarray  # uint8 [R^3]

    def __len__(self) -> int:
        return len(self.labels)


def sample_occupancy_pairs(shape: LabeledShape | None, grid: OccupancyGrid) -> OccupancySamples:
    """One sample per cell center.  If ``shape`` is given, the grid is checked against it."""
    centers = grid.centers()
    labels = grid.values.reshape(-1).astype(np.uint8)
    if shape is not None and not np.array_equal(shape.occupancy(centers), labels.astype(bool)):
        raise GeometryError("grid does not match the shape's analytic occupancy")
    return OccupancySamples(centers, labels)


def surface_area_fraction(shape: LabeledShape, cloud: PointCloud) -> np.ndarray:
    """Fraction of cloud points per part label."""
    return np.bincount(cloud.labels, minlength=shape.n_parts) / max(1, len(cloud))

