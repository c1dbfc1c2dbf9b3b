"""On-disk dataset: ``manifest.json`` plus per-shape ``<id>.grid`` / ``<id>.pts`` blobs.

``.grid``: ``b"M3DG"``, u32 version, u32 resolution, then R^3 bytes of {0, 1}.
``.pts``:  ``b"M3DP"``, u32 version, u32 n, then n records of 3 x f32 + u16 label.
All header fields are little-endian.  Unlabeled points carry label 0xFFFF.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .shapes import LabeledShape, OccupancyGrid, PointCloud, generate_shape

FORMAT_VERSION = 1
GRID_MAGIC = b"M3DG"
PTS_MAGIC = b"M3DP"
UNLABELED = 0xFFFF
_PTS_DTYPE = np.dtype([("xyz", "<f4", (3,)), ("label", "<u2")])


class DatasetFormatError(ValueError):
    """Bad magic, unsupported version, checksum mismatch or invalid manifest."""


@dataclass
class ShapeRecord:
    id: str
    category: str
    seed: int
    params: dict[str, float]
    grid: OccupancyGrid
    cloud: PointCloud
    split: str = "train"
    part_names: list[str] = field(default_factory=list)

    def shape(self) -> LabeledShape:
        return generate_shape(self.category, self.seed, self.params)


@dataclass
class Dataset:
    records: list[ShapeRecord]
    version: int = FORMAT_VERSION

    def split(self, name: str) -> list[ShapeRecord]:
        return [r for r in self.records if r.split == name]

    def category(self, name: str) -> list[ShapeRecord]:
        return [r for r in self.records if r.category == name]

    def __len__(self) -> int:
        return len(self.records)


def encode_grid(grid: OccupancyGrid) -> bytes:
    body = np.ascontiguousarray(grid.values, dtype=np.uint8).tobytes()
    return GRID_MAGIC + struct.pack("<II", FORMAT_VERSION, grid.resolution) + body


def decode_grid(blob: bytes) -> OccupancyGrid:
    if blob[:4] != GRID_MAGIC:
        raise DatasetFormatError("not a grid file (bad magic)")
    version, res = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported grid version {version}")
    body = np.frombuffer(blob, dtype=np.uint8, offset=12)
    if body.size != res ** 3 or np.any(body > 1):
        raise DatasetFormatError("grid payload does not hold R^3 binary values")
    return OccupancyGrid(res, body.reshape(res, res, res).copy())


def encode_points(cloud: PointCloud) -> bytes:
    rec = np.zeros(len(cloud), dtype=_PTS_DTYPE)
    rec["xyz"] = cloud.points
    rec["label"] = UNLABELED if cloud.labels is None else cloud.labels
    return PTS_MAGIC + struct.pack("<II", FORMAT_VERSION, len(cloud)) + rec.tobytes()


def decode_points(blob: bytes) -> PointCloud:
    if blob[:4] != PTS_MAGIC:
        raise DatasetFormatError("not a point file (bad magic)")
    version, n = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported point file version {version}")
    if len(blob) - 12 != n * _PTS_DTYPE.itemsize:
        raise DatasetFormatError("point payload length does not match header count")
    rec = np.frombuffer(blob, dtype=_PTS_DTYPE, offset=12)
    labels = rec["label"].astype(np.int64)
    return PointCloud(rec["xyz"].astype(np.float32),
                      None if np.all(labels == UNLABELED) else labels)


def _sha256(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def validate_manifest(manifest: dict) -> None:
    if manifest.get("format") != "meta3dseg-dataset":
        raise DatasetFormatError("manifest is not a meta3dseg dataset")
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported manifest version {manifest.get('version')}")
    ids = [r["id"] for r in manifest.get("records", [])]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise DatasetFormatError(f"duplicate shape ids in manifest: {', '.join(dupes)}")
    for r in manifest["records"]:
        if r.get("split") not in ("train", "test"):
            raise DatasetFormatError(f"record {r['id']} has invalid split {r.get('split')!r}")


def save_dataset(records: Iterable[ShapeRecord], path: str | Path) -> dict:
    """Write blobs and the manifest; returns the manifest dict."""
    root = Path(path)
    records = list(records)
    entries = []
    blobs = {}
    for r in records:
        grid_blob, pts_blob = encode_grid(r.grid), encode_points(r.cloud)
        blobs[f"{r.id}.grid"] = grid_blob
        blobs[f"{r.id}.pts"] = pts_blob
        entries.append({
            "id": r.id, "category": r.category, "seed": int(r.seed),
            "params": {k: float(v) for k, v in sorted(r.params.items())},
            "part_names": list(r.part_names), "split": r.split,
            "grid": {"file": f"{r.id}.grid", "offset": 0, "bytes": len(grid_blob),
                     "sha256": _sha256(grid_blob)},
            "points": {"file": f"{r.id}.pts", "offset": 0, "bytes": len(pts_blob),
                       "sha256": _sha256(pts_blob)},
        })
    manifest = {"format": "meta3dseg-dataset", "version": FORMAT_VERSION, "records": entries}
    validate_manifest(manifest)
    root.mkdir(parents=True, exist_ok=True)
    for name, blob in blobs.items():
        (root / name).write_bytes(blob)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def _read_blob(root: Path, ref: dict, rid: str) -> bytes:
    blob = (root / ref["file"]).read_bytes()
    blob = blob[ref.get("offset", 0):ref.get("offset", 0) + ref["bytes"]]
    if len(blob) != ref["bytes"] or _sha256(blob) != ref["sha256"]:
        raise DatasetFormatError(f"checksum mismatch for {rid} ({ref['file']})")
    return blob


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"manifest is not valid JSON: {exc}") from exc
    validate_manifest(manifest)
    records = []
    for e in manifest["records"]:
        records.append(ShapeRecord(
            id=e["id"], category=e["category"], seed=int(e["seed"]), params=dict(e["params"]),
            grid=decode_grid(_read_blob(root, e["grid"], e["id"])),
            cloud=decode_points(_read_blob(root, e["points"], e["id"])),
            split=e["split"], part_names=list(e.get("part_names", [])),
        ))
    return Dataset(records, manifest["version"])


def import_text_points(path: str | Path, normalize: bool = True) -> PointCloud:
    """Read ``x y z label`` lines (ShapeNet-part style).

    With ``normalize`` the cloud is centered on its bounding box and scaled so
    the longest side spans 0.9, which keeps it inside the unit cube.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 4:
            raise DatasetFormatError(f"{path}:{lineno}: expected 'x y z label', got {line!r}")
        try:
            rows.append((float(fields[0]), float(fields[1]), float(fields[2]), int(fields[3])))
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DatasetFormatError(f"{path}: no points")
    arr = np.array(rows)
    pts = arr[:, :3]
    labels = arr[:, 3].astype(np.int64)
    if normalize:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pts = (pts - (lo + hi) / 2.0) * (0.9 / max(float((hi - lo).max()), 1e-12))
    elif np.any(np.abs(pts) > 0.5):
        raise DatasetFormatError(f"{path}: coordinates outside [-0.5, 0.5]^3 (use normalize=True)")
    if labels.min() < 0:
        raise DatasetFormatError(f"{path}: negative part label")
    return PointCloud(pts.astype(np.float32), labels)
