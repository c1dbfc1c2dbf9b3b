"""ASCII PLY export of labeled point clouds."""
from __future__ import annotations

from pathlib import Path

import numpy as np

# one colour per part label
PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [0, 130, 200], [255, 225, 25],
    [145, 30, 180], [70, 240, 240], [245, 130, 48], [128, 128, 128],
], dtype=np.uint8)


class PaletteError(ValueError):
    pass


def colors_for(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    bad = labels[(labels < 0) | (labels >= len(PALETTE))]
    if bad.size:
        raise PaletteError(f"label {int(bad[0])} is outside the {len(PALETTE)}-colour palette")
    return PALETTE[labels]


def ply_text(points, labels) -> str:
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    rgb = colors_for(labels)
    if len(rgb) != len(pts):
        raise ValueError(f"{len(pts)} points but {len(rgb)} labels")
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue", "end_header"]
    # %.9g round-trips every float32 exactly
    lines += [f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}" for (x, y, z), (r, g, b) in zip(pts.tolist(), rgb.tolist())]
    return "\n".join(lines) + "\n"


def write_ply(path: str | Path, points, labels) -> None:
    Path(path).write_text(ply_text(points, labels))


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Parse files written by :func:`write_ply`: (points [N, 3], colours [N, 3] uint8)."""
    lines = Path(path).read_text().splitlines()
    if lines[:2] != ["ply", "format ascii 1.0"]:
        raise ValueError(f"{path}: not an ASCII PLY file")
    end = lines.index("end_header")
    count = next(int(l.split()[2]) for l in lines[:end] if l.startswith("element vertex"))
    rows = [l.split() for l in lines[end + 1:end + 1 + count]]
    if len(rows) != count:
        raise ValueError(f"{path}: header declares {count} vertices, found {len(rows)}")
    pts = np.array([[float(v) for v in r[:3]] for r in rows]).reshape(-1, 3)
    rgb = np.array([[int(v) for v in r[3:6]] for r in rows], dtype=np.uint8).reshape(-1, 3)
    return pts, rgb
