import csv
import io
import itertools
import json

import numpy as np
import pytest

from meta3dseg.evaluation import (category_miou, compute_iou, evaluate_records, fit_branch_assignment,
                                  point_count_sweep, score_category, scores_csv, scores_json,
                                  ablation_csv)
from meta3dseg.geometry import make_record
from oracles import compositions, set_count_iou


def test_assignment_example():
    m = fit_branch_assignment(np.array([0, 0, 1, 1, 2, 2]), np.array([0, 0, 0, 0, 1, 1]), 3, 2)
    assert m.tolist() == [0, 0, 1]


def test_assignment_identity_and_empty_branches():
    gt = np.array([0, 1, 2, 1, 0])
    assert fit_branch_assignment(gt, gt, 3, 3).tolist() == [0, 1, 2]
    m = fit_branch_assignment(np.full(5, 2), np.array([1, 1, 1, 0, 0]), 4, 2)
    assert m.tolist() == [0, 0, 1, 0]


def test_assignment_spans_shapes():
    m = fit_branch_assignment([np.array([0, 0]), np.array([0, 1])], [np.array([1, 1]), np.array([0, 0])], 2, 2)
    assert m.tolist() == [1, 0]


def test_assignment_errors():
    with pytest.raises(ValueError, match="misaligned"):
        fit_branch_assignment(np.array([0, 1]), np.array([0]), 2, 2)
    with pytest.raises(ValueError, match="range"):
        fit_branch_assignment(np.array([0, 5]), np.array([0, 1]), 2, 2)


def test_iou_examples():
    s = compute_iou(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 2)
    assert s.per_part_iou == [0.5, 2 / 3]
    assert s.mean_iou == pytest.approx(7 / 12, abs=1e-15)
    assert s.accuracy == 0.75
    same = compute_iou(np.array([1, 0, 1]), np.array([1, 0, 1]), 2)
    assert same.mean_iou == 1.0 and same.accuracy == 1.0
    disjoint = compute_iou(np.zeros(4, int), np.ones(4, int), 2)
    assert disjoint.per_part_iou == [0.0, 0.0]


def test_iou_absent_part_scores_one():
    s = compute_iou(np.array([0, 0]), np.array([0, 0]), 3)
    assert s.per_part_iou == [1.0, 1.0, 1.0]


def test_iou_errors():
    with pytest.raises(ValueError, match="empty"):
        compute_iou(np.array([], int), np.array([], int), 2)
    with pytest.raises(ValueError, match="misaligned"):
        compute_iou(np.array([0]), np.array([0, 1]), 2)


def test_iou_matches_set_counting():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n, parts = int(rng.integers(1, 60)), int(rng.integers(1, 6))
        pred, gt = rng.integers(0, parts, n), rng.integers(0, parts, n)
        ref = set_count_iou(pred.tolist(), gt.tolist(), parts)
        s = compute_iou(pred, gt, parts)
        assert s.per_part_iou == ref
        assert s.mean_iou == float(np.mean(ref))
        assert s.accuracy == sum(int(a == b) for a, b in zip(pred, gt)) / n


def test_iou_symmetry_and_single_part():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = rng.integers(0, 3, 20), rng.integers(0, 3, 20)
        assert compute_iou(a, b, 3).per_part_iou == compute_iou(b, a, 3).per_part_iou
    s = compute_iou(np.zeros(7, int), np.zeros(7, int), 1)
    assert s.mean_iou == s.accuracy == 1.0


def test_category_mean():
    one = compute_iou(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 2)
    assert category_miou([one]) == one.mean_iou
    with pytest.raises(ValueError):
        category_miou([])


def test_scores_invariant_under_branch_permutation():
    rng = np.random.default_rng(8)
    branches = [rng.integers(0, 4, 30) for _ in range(3)]
    gts = [rng.integers(0, 2, 30) for _ in range(3)]
    base = score_category(branches, gts, 4, 2, "x")
    perm = rng.permutation(4)
    moved = score_category([perm[b] for b in branches], gts, 4, 2, "x")
    assert moved.mean_iou == base.mean_iou and moved.accuracy == base.accuracy


def test_fitted_mapping_against_brute_force():
    """Every stream of <= 12 points with c <= 3 branches and <= 2 parts.

    Scores depend only on the branch x part co-occurrence counts, so
    enumerating count matrices covers every stream.  The fitted mapping must
    reach the best accuracy of any fixed branch -> part mapping, and never fall
    below the best single-label (constant) mapping in mean IoU.
    """
    checked = 0
    for c in (1, 2, 3):
        for parts in (1, 2):
            mappings = [np.array(m) for m in itertools.product(range(parts), repeat=c)]
            for n in range(1, 13):
                for counts in compositions(n, c * parts):
                    cells = np.repeat(np.arange(c * parts), counts)
                    b, g = cells // parts, cells % parts
                    fitted = compute_iou(fit_branch_assignment(b, g, c, parts)[b], g, parts)
                    best_acc = max(compute_iou(m[b], g, parts).accuracy for m in mappings)
                    best_const = max(compute_iou(np.full(n, p), g, parts).mean_iou for p in range(parts))
                    assert fitted.accuracy == best_acc
                    assert fitted.mean_iou >= best_const
                    checked += 1
    assert checked == 21028


def test_evaluate_with_ground_truth_predictor():
    recs = [make_record("mug", s) for s in range(3)]
    truth = {r.id: r for r in recs}

    def oracle(record, points):
        return truth[record.id].shape().label_points(points)

    score = evaluate_records(oracle, recs, n_branches=2)
    assert score.mean_iou == 1.0 and score.accuracy == 1.0
    with pytest.raises(ValueError, match="one category"):
        evaluate_records(oracle, recs + [make_record("table", 0)], 2)


def test_constant_predictor_sweep():
    recs = [make_record("table", 100 + s) for s in range(6)]
    sweep = point_count_sweep(lambda r, p: np.zeros(len(p), np.int64), recs, 8, seed=3)
    assert [c for c, _ in sweep.rows] == [512, 1024, 2048]
    assert sweep.spread < 0.02
    again = point_count_sweep(lambda r, p: np.zeros(len(p), np.int64), recs, 8, seed=3)
    assert again.rows == sweep.rows


def test_reports():
    s = score_category([np.array([0, 1])], [np.array([0, 1])], 2, 2, "mug")
    rows = list(csv.reader(io.StringIO(scores_csv([s]))))
    assert rows[0] == ["category", "n_shapes", "mean_iou", "accuracy"]
    assert rows[1] == ["mug", "1", "1.000000", "1.000000"]
    doc = json.loads(scores_json([s]))
    assert doc["assignment_fit_on"] == "evaluated split"
    table = list(csv.reader(io.StringIO(ablation_csv([("A", 0.837, 0.887), ("C", 0.902, 0.944)]))))
    assert table == [["setting", "iou", "acc"], ["A", "83.70", "88.70"], ["C", "90.20", "94.40"]]
