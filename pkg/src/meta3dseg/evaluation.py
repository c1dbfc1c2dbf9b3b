"""Scoring unsupervised segmentations against ground-truth part labels.

Branch indices produced by the learner are arbitrary, so each branch is first
mapped to the ground-truth part it co-occurs with most often over the whole
category (many-to-one).  The mapping is fit on the evaluated split itself.
"""
from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import ShapeRecord, sample_surface_points


@dataclass
class SegmentationScore:
    per_part_iou: list[float]
    mean_iou: float
    accuracy: float
    n_points: int
    category: str = ""


def fit_branch_assignment(branches: Sequence[np.ndarray] | np.ndarray,
                          gt_labels: Sequence[np.ndarray] | np.ndarray,
                          n_branches: int, n_parts: int) -> np.ndarray:
    """Map every branch to its most frequent ground-truth part (ties and empty branches -> lowest part)."""
    b = np.concatenate([np.asarray(x).reshape(-1) for x in branches]) \
        if isinstance(branches, (list, tuple)) else np.asarray(branches).reshape(-1)
    g = np.concatenate([np.asarray(x).reshape(-1) for x in gt_labels]) \
        if isinstance(gt_labels, (list, tuple)) else np.asarray(gt_labels).reshape(-1)
    if b.shape != g.shape:
        raise ValueError(f"misaligned label streams: {b.size} predictions vs {g.size} labels")
    if b.size and (b.min() < 0 or b.max() >= n_branches or g.min() < 0 or g.max() >= n_parts):
        raise ValueError("label out of range")
    counts = np.zeros((n_branches, n_parts), dtype=np.int64)
    np.add.at(counts, (b, g), 1)
    return np.argmax(counts, axis=1)


def compute_iou(pred: np.ndarray, gt: np.ndarray, n_parts: int, category: str = "") -> SegmentationScore:
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if pred.size == 0:
        raise ValueError("cannot score an empty point set")
    if pred.shape != gt.shape:
        raise ValueError(f"misaligned label streams: {pred.size} vs {gt.size}")
    ious = []
    for p in range(n_parts):
        a, b = pred == p, gt == p
        union = np.count_nonzero(a | b)
        # a part absent from both prediction and ground truth counts as perfect
        ious.append(1.0 if union == 0 else np.count_nonzero(a & b) / union)
    return SegmentationScore(ious, float(np.mean(ious)), float(np.mean(pred == gt)), int(pred.size),
                             category)


def category_miou(scores: Iterable[SegmentationScore]) -> float:
    vals = [s.mean_iou for s in scores]
    if not vals:
        raise ValueError("no shapes to average")
    return float(np.mean(vals))


@dataclass
class CategoryScore:
    category: str
    n_shapes: int
    mean_iou: float
    accuracy: float
    assignment: list[int]
    shapes: list[SegmentationScore] = field(default_factory=list)


# (record, query points) -> branch index per point
Predictor = Callable[[ShapeRecord, np.ndarray], np.ndarray]


def score_category(branch_labels: Sequence[np.ndarray], gt_labels: Sequence[np.ndarray],
                   n_branches: int, n_parts: int, category: str) -> CategoryScore:
    mapping = fit_branch_assignment(list(branch_labels), list(gt_labels), n_branches, n_parts)
    shapes = [compute_iou(mapping[b], g, n_parts, category) for b, g in zip(branch_labels, gt_labels)]
    return CategoryScore(category, len(shapes), category_miou(shapes),
                         float(np.mean([s.accuracy for s in shapes])), mapping.tolist(), shapes)


def eval_points_seed(seed: int, record_id: str, count: int) -> int:
    return int(np.random.SeedSequence([seed, count, zlib.crc32(record_id.encode())]).generate_state(1)[0])


def evaluate_records(predict: Predictor, records: Sequence[ShapeRecord], n_branches: int,
                     n_points: int | None = None, seed: int = 0) -> CategoryScore:
    """Score one category.  ``n_points=None`` uses each record's stored cloud."""
    if not records:
        raise ValueError("no records to evaluate")
    cats = {r.category for r in records}
    if len(cats) != 1:
        raise ValueError(f"evaluate one category at a time, got {sorted(cats)}")
    branches, gts = [], []
    n_parts = len(records[0].part_names)
    for r in records:
        if n_points is None:
            pts, gt = r.cloud.points, r.cloud.labels
        else:
            cloud = sample_surface_points(r.shape(), n_points, eval_points_seed(seed, r.id, n_points))
            pts, gt = cloud.points, cloud.labels
        branches.append(np.asarray(predict(r, pts)))
        gts.append(gt)
    return score_category(branches, gts, n_branches, n_parts, records[0].category)


@dataclass
class SweepResult:
    category: str
    rows: list[tuple[int, float]]

    @property
    def spread(self) -> float:
        vals = [v for _, v in self.rows]
        return max(vals) - min(vals)


def point_count_sweep(predict: Predictor, records: Sequence[ShapeRecord], n_branches: int,
                      counts: Sequence[int] = (512, 1024, 2048), seed: int = 0) -> SweepResult:
    rows = [(c, evaluate_records(predict, records, n_branches, c, seed).mean_iou) for c in counts]
    return SweepResult(records[0].category, rows)


# --- reports ---------------------------------------------------------------------------

def scores_csv(scores: Sequence[CategoryScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "n_shapes", "mean_iou", "accuracy"])
    for s in scores:
        w.writerow([s.category, s.n_shapes, f"{s.mean_iou:.6f}", f"{s.accuracy:.6f}"])
    return buf.getvalue()


def scores_json(scores: Sequence[CategoryScore]) -> str:
    return json.dumps({"assignment_fit_on": "evaluated split",
                       "categories": [asdict(s) for s in scores]}, indent=1, sort_keys=True) + "\n"


def ablation_csv(rows: Sequence[tuple[str, float, float]]) -> str:
    """Table-1-shaped CSV: ``setting,iou,acc`` (percentages)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "iou", "acc"])
    for setting, iou, acc in rows:
        w.writerow([setting, f"{100 * iou:.2f}", f"{100 * acc:.2f}"])
    return buf.getvalue()
