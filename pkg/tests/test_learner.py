import math

import numpy as np
import pytest

from meta3dseg import numerics as nx
from meta3dseg.geometry import OccupancyGrid, make_record
from meta3dseg.learner import (ArchitectureConfig, ArchitectureError, LearnerWeights, ShapeTable,
                               embed_shape, get_preset, grid_tensor, init_encoder, point_feature,
                               predict_point, predict_points, predictor_logits, segment_shape)
from meta3dseg.numerics import NumericsError, ops
from helpers import grad_of, numeric_grad
from oracles import rel_error

TINY = get_preset("tiny")


def random_grid(rng, r):
    return OccupancyGrid(r, (rng.random((r, r, r)) < 0.4).astype(np.uint8))


def test_paper_preset_embedding_length(rng):
    arch = get_preset("paper")
    enc = init_encoder(arch, rng)
    f_v = embed_shape(random_grid(rng, 32), enc, arch)
    assert f_v.shape == (1024,)


def test_zero_encoder_gives_zero_embedding(rng):
    arch = get_preset("desk")
    enc = {k: nx.tensor(np.zeros(v.shape)) for k, v in init_encoder(arch, rng).items()}
    assert np.all(embed_shape(random_grid(rng, 16), enc, arch).data == 0)


def test_resolution_mismatch(rng):
    arch = get_preset("desk")
    with pytest.raises(ArchitectureError, match="resolution"):
        embed_shape(random_grid(rng, 8), init_encoder(arch, rng), arch)


def test_preset_validation():
    with pytest.raises(ArchitectureError):
        ArchitectureConfig("bad", 16, (8, 8), (4,), 2, 2, (4,))
    with pytest.raises(ArchitectureError, match="unknown architecture preset"):
        get_preset("huge")


def test_point_feature_order():
    out = point_feature(nx.tensor([1.0, 2, 3, 4]), [0.1, -0.2, 0.3])
    assert np.allclose(out.data, [1, 2, 3, 4, 0.1, -0.2, 0.3])
    other = point_feature(nx.tensor([1.0, 2, 3, 4]), [0.0, 0.0, 0.0])
    assert np.array_equal(out.data[:4], other.data[:4])


def test_point_feature_checked_mode():
    with nx.checked():
        with pytest.raises(NumericsError, match="outside"):
            point_feature(nx.tensor([1.0]), [0.6, 0.0, 0.0])


def test_zero_weights_predict_half(rng):
    arch = get_preset("desk")
    table = ShapeTable.for_arch(arch)
    f_v = nx.tensor(rng.normal(size=arch.embedding_dim))
    p = predict_point(f_v, [0.1, 0.2, -0.3], LearnerWeights.zeros(table))
    assert np.all(p.branch_activations == 0.5)
    assert p.occupancy == 0.5 and p.part_label == 0


def test_hand_built_branch_two():
    arch = ArchitectureConfig("hand", 2, (2,), (1,), 3, 1, (1,))
    table = ShapeTable.for_arch(arch)
    flat = np.zeros(table.size)
    names = {e.name: e for e in table.entries}
    flat[names["g2.0.bias"].start] = 1.0  # hidden unit = relu(1) = 1
    g3 = names["g3.weight"]
    flat[g3.start:g3.stop] = [-10.0, -10.0, 10.0]
    w = LearnerWeights(nx.tensor(flat), nx.tensor(np.zeros(table.size)), table)
    p = predict_point(nx.tensor([0.3, -0.7]), [0.0, 0.0, 0.0], w)
    assert p.part_label == 2
    assert p.occupancy == pytest.approx(1 / (1 + math.exp(-10)), rel=1e-6)
    assert p.occupancy == p.branch_activations[p.part_label]


def test_weight_length_mismatch():
    table = ShapeTable.for_arch(TINY)
    with pytest.raises(ArchitectureError):
        LearnerWeights(nx.tensor(np.zeros(table.size)), nx.tensor(np.zeros(table.size + 1)), table)
    with pytest.raises(ArchitectureError):
        predictor_logits(nx.tensor(np.zeros(3)), nx.tensor(np.zeros((1, 3))), nx.tensor(np.zeros(5)), table)


def test_shape_table_tiles_the_vector():
    for name in ("paper", "desk", "tiny"):
        arch = get_preset(name)
        table = ShapeTable.for_arch(arch)
        dims = [arch.point_dim, *arch.decoder_dims, arch.n_branches]
        assert table.size == sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
        assert table.n_tensors == 2 * (len(dims) - 1)
        stops = [0] + [e.stop for e in table.entries]
        assert all(e.start == s for e, s in zip(table.entries, stops))


def test_additive_composition_is_exact(rng):
    arch = get_preset("desk")
    table = ShapeTable.for_arch(arch)
    f_v = nx.tensor(rng.normal(size=arch.embedding_dim))
    tm, tl = rng.normal(0, 0.2, table.size), rng.normal(0, 0.2, table.size)
    split = LearnerWeights(nx.tensor(tm), nx.tensor(tl), table)
    summed = LearnerWeights(nx.tensor(split.effective().data), nx.tensor(np.zeros(table.size)), table)
    pts = rng.uniform(-0.5, 0.5, (50, 3))
    a, _, la = predict_points(f_v, pts, split)
    b, _, lb = predict_points(f_v, pts, summed)
    assert np.array_equal(a.data, b.data) and np.array_equal(la, lb)
    zero_l = LearnerWeights(nx.tensor(tm), nx.tensor(np.zeros(table.size)), table)
    alone = predict_points(f_v, pts, nx.tensor(tm), table)
    assert np.array_equal(predict_points(f_v, pts, zero_l)[0].data, alone[0].data)


def test_batched_matches_single_point(f64, rng):
    arch = get_preset("desk")
    table = ShapeTable.for_arch(arch)
    f_v = nx.tensor(rng.normal(size=arch.embedding_dim))
    w = LearnerWeights(nx.tensor(table.he_init(rng)), nx.tensor(np.zeros(table.size)), table)
    pts = rng.uniform(-0.5, 0.5, (20, 3))
    acts, occ, labels = predict_points(f_v, pts, w)
    for i, x in enumerate(pts):
        p = predict_point(f_v, x, w)
        assert np.allclose(p.branch_activations, acts.data[i], rtol=1e-12, atol=1e-14)
        assert p.part_label == labels[i]
        assert 0 < p.occupancy < 1


def test_point_linear_matches_features_plus_linear(f64, rng):
    emb = nx.tensor(rng.normal(size=5), requires_grad=True)
    coords = nx.tensor(rng.uniform(-0.5, 0.5, (7, 3)))
    w = nx.tensor(rng.normal(size=(4, 8)), requires_grad=True)
    b = nx.tensor(rng.normal(size=4), requires_grad=True)
    fused = ops.point_linear(emb, coords, w, b)
    ref = ops.linear(ops.point_features(emb, coords), w, b)
    assert np.allclose(fused.data, ref.data, rtol=1e-12, atol=1e-12)
    g1 = grad_of(lambda: ops.sum(ops.square(ops.point_linear(emb, coords, w, b))), [emb, w, b])
    g2 = grad_of(lambda: ops.sum(ops.square(ops.linear(ops.point_features(emb, coords), w, b))),
                 [emb, w, b])
    for a, c in zip(g1, g2):
        assert np.allclose(a, c, rtol=1e-10, atol=1e-12)


def test_segment_shape_contract(rng):
    r = make_record("table", 3)
    arch = get_preset("desk")
    enc = init_encoder(arch, rng)
    table = ShapeTable.for_arch(arch)
    w = LearnerWeights(nx.tensor(table.he_init(rng)), nx.tensor(np.zeros(table.size)), table)
    pts = r.cloud.points[:300]
    seg = segment_shape(r.grid, pts, enc, w, arch)
    assert seg.labels.shape == (300,) and seg.occupancy.shape == (300,)
    perm = rng.permutation(300)
    seg_p = segment_shape(r.grid, pts[perm], enc, w, arch)
    assert np.array_equal(seg_p.labels, seg.labels[perm])
    assert np.array_equal(seg_p.occupancy, seg.occupancy[perm])
    again = segment_shape(r.grid, pts, enc, w, arch)
    assert np.array_equal(again.activations, seg.activations)


def test_he_init_starting_point(rng):
    table = ShapeTable.for_arch(get_preset("desk"))
    flat = table.he_init(rng)
    (w0, _), *_, (w3, b3) = table.layers()
    first = flat[w0.start:w0.stop].reshape(w0.shape)
    assert np.std(first[:, -3:]) > 3 * np.std(first[:, :-3])
    assert np.allclose(flat[w3.start:w3.stop].reshape(w3.shape).mean(axis=1), 0, atol=1e-12)
    assert np.all(flat[b3.start:b3.stop] == -2.0)


@pytest.mark.parametrize("trial", range(3))
def test_end_to_end_gradient(f64, trial):
    """d loss / d (encoder, theta_l) against central differences on the tiny preset."""
    rng = np.random.default_rng(300 + trial)
    arch = TINY
    table = ShapeTable.for_arch(arch)
    enc = init_encoder(arch, rng)
    grid = grid_tensor(random_grid(rng, arch.resolution))
    theta_m = nx.tensor(rng.normal(0, 0.5, table.size))
    theta_l = nx.tensor(rng.normal(0, 0.5, table.size), requires_grad=True)
    pts = rng.uniform(-0.5, 0.5, (6, 3))
    y = (rng.random(6) < 0.5).astype(float)
    leaves = [*enc.values(), theta_l]
    assert sum(t.size for t in leaves) < 1000

    def build():
        f_v = embed_shape(grid, enc, arch)
        _, occ, _ = predict_points(f_v, pts, LearnerWeights(theta_m, theta_l, table))
        return ops.mean(ops.square(ops.sub(occ, nx.tensor(y))))

    analytic = grad_of(build, leaves)
    numeric = numeric_grad(build, leaves)
    assert rel_error(np.concatenate([a.ravel() for a in analytic]),
                     np.concatenate([n.ravel() for n in numeric])) < 1e-4
