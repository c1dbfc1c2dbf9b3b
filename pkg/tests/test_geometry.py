import json
import math

import numpy as np
import pytest

from meta3dseg.geometry import (CATEGORIES, PARAM_RANGES, Box, DatasetFormatError, GeometryError,
                                LabeledShape, Sphere, cell_centers, generate_shape,
                                import_text_points, load_dataset, make_record,
                                sample_occupancy_pairs, sample_surface_points, save_dataset,
                                voxelize)

TABLE_PARAMS = {"top_height": 0.48, "top_thickness": 0.08, "top_half_x": 0.35, "top_half_z": 0.30,
                "leg_radius": 0.06, "leg_inset": 0.03}


def test_table_parts_and_predicates():
    shape = generate_shape("table", 11, TABLE_PARAMS)
    assert shape.part_names == ["top", "legs"] and shape.n_parts == 2
    pts = np.array([[0.0, 0.44, 0.0], [0.49, 0.49, 0.49]])
    assert shape.occupancy(pts).tolist() == [True, False]
    assert shape.part_labels(pts).tolist() == [0, -1]


@pytest.mark.parametrize("category,parts", [
    ("table", ["top", "legs"]), ("chair", ["seat", "back", "legs"]), ("mug", ["body", "handle"]),
    ("airplane_toy", ["fuselage", "wings", "tail"]),
])
def test_category_part_lists(category, parts):
    assert generate_shape(category, 0).part_names == parts


def test_generation_is_deterministic_and_inside_cube():
    for cat in CATEGORIES:
        for seed in range(25):
            a, b = generate_shape(cat, seed), generate_shape(cat, seed)
            assert a == b
            lo, hi = a.bounds()
            assert np.all(lo >= -0.5) and np.all(hi <= 0.5)
            for name, (low, high) in PARAM_RANGES[cat].items():
                assert low <= a.params[name] <= high


def test_generation_errors():
    with pytest.raises(GeometryError, match="boat"):
        generate_shape("boat", 0)
    with pytest.raises(GeometryError):
        generate_shape("table", 0, {"leg_radius": 0.5})
    with pytest.raises(GeometryError):
        generate_shape("table", 0, {"wingspan": 0.1})


def test_overlap_resolves_to_lowest_part():
    shape = generate_shape("table", 3)
    # a leg reaches mid-slab; its top end lies inside the slab
    leg = shape.parts[1][0]
    top_of_leg = np.array([[leg.center[0], leg.center[1] + leg.half_height - 1e-3, leg.center[2]]])
    assert shape.part_contains(top_of_leg).tolist() == [[True, True]]
    assert shape.part_labels(top_of_leg).tolist() == [0]


# --- voxelize ---------------------------------------------------------------------

def test_voxelize_full_cube():
    full = LabeledShape("test", ["all"], [[Box((0.0, 0.0, 0.0), (0.5, 0.5, 0.5))]])
    grid = voxelize(full, 4)
    assert grid.values.shape == (4, 4, 4) and grid.n_inside == 64


def test_voxelize_sphere_enumeration():
    sphere = LabeledShape("test", ["ball"], [[Sphere((0.0, 0.0, 0.0), 0.4)]])
    grid = voxelize(sphere, 4)
    # oracle: enumerate the 64 centers by hand
    c = [-0.375, -0.125, 0.125, 0.375]
    inside = [(x, y, z) for x in c for y in c for z in c if x * x + y * y + z * z <= 0.16]
    assert len(inside) == 8 and all(abs(v) == 0.125 for p in inside for v in p)
    assert grid.n_inside == 8
    idx = np.argwhere(grid.values)
    assert set(map(tuple, idx)) == {(i, j, k) for i in (1, 2) for j in (1, 2) for k in (1, 2)}


def test_voxelize_empty_and_bad_resolution():
    empty = LabeledShape("test", ["none"], [[]])
    assert voxelize(empty, 4).n_inside == 0
    with pytest.raises(GeometryError):
        voxelize(empty, 1)


def test_voxelize_matches_analytic_oracle_on_100_shapes():
    centers = cell_centers(16)
    for i in range(100):
        cat = CATEGORIES[i % 4]
        shape = generate_shape(cat, 1000 + i)
        grid = voxelize(shape, 16)
        expected = np.array([any(p.contains(c[None])[0] for part in shape.parts for p in part)
                             for c in centers[::7]])
        assert np.array_equal(grid.values.reshape(-1)[::7].astype(bool), expected)


def test_cell_center_frame():
    c = cell_centers(16)
    assert c.shape == (4096, 3)
    assert np.allclose(c[0], [-0.5 + 0.5 / 16] * 3)
    assert np.allclose(c[-1], [0.5 - 0.5 / 16] * 3)


# --- surface points -------------------------------------------------------------

def test_surface_points_contract():
    for cat in CATEGORIES:
        shape = generate_shape(cat, 5)
        cloud = sample_surface_points(shape, 512, 9)
        again = sample_surface_points(shape, 512, 9)
        assert len(cloud) == 512 and cloud.points.dtype == np.float32
        assert np.array_equal(cloud.points, again.points) and np.array_equal(cloud.labels, again.labels)
        assert cloud.labels.min() >= 0 and cloud.labels.max() < shape.n_parts
        assert np.all(np.abs(cloud.points) <= 0.5)
        # on the boundary: |union sdf| is tiny
        d = shape.part_sdf(cloud.points).min(axis=1)
        assert np.all(np.abs(d) < 1e-5)


def test_surface_point_errors():
    with pytest.raises(GeometryError):
        sample_surface_points(generate_shape("mug", 0), 0, 1)
    with pytest.raises(GeometryError):
        sample_surface_points(LabeledShape("test", ["none"], [[]]), 10, 1)


def _exposed_table_areas(p):
    """Analytic exposed surface areas (top, legs) of the generated table."""
    a, b, t = p["top_half_x"], p["top_half_z"], p["top_thickness"]
    r = p["leg_radius"]
    slab = 2 * (2 * a * 2 * b) + 2 * t * (2 * a + 2 * b)
    slab -= 4 * math.pi * r * r  # leg footprints on the underside
    leg_len = (p["top_height"] - t) - (-0.45)
    legs = 4 * (2 * math.pi * r * leg_len + math.pi * r * r)
    return slab, legs


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_table_label_fraction_matches_area_ratio(seed):
    shape = generate_shape("table", seed)
    slab, legs = _exposed_table_areas(shape.params)
    cloud = sample_surface_points(shape, 2048, seed)
    frac_top = float(np.mean(cloud.labels == 0))
    assert abs(frac_top - slab / (slab + legs)) <= 0.05


def test_surface_labels_are_permutation_stable():
    shape = generate_shape("chair", 4)
    cloud = sample_surface_points(shape, 700, 2)
    perm = np.random.default_rng(0).permutation(700)
    relabeled = shape.label_points(cloud.points[perm].astype(np.float64))
    assert np.array_equal(relabeled, cloud.labels[perm])


# --- occupancy pairs ------------------------------------------------------------------

def test_occupancy_pairs_partition_the_grid():
    shape = generate_shape("mug", 2)
    grid = voxelize(shape, 16)
    samples = sample_occupancy_pairs(shape, grid)
    assert len(samples) == 4096
    assert np.array_equal(samples.labels, grid.values.reshape(-1))
    assert int(samples.labels.sum()) == grid.n_inside
    inside = samples.labels == 1
    assert inside.sum() + (~inside).sum() == 16 ** 3
    assert np.array_equal(shape.occupancy(samples.points), inside)


def test_occupancy_pairs_reject_inconsistent_grid():
    grid = voxelize(generate_shape("mug", 2), 16)
    with pytest.raises(GeometryError):
        sample_occupancy_pairs(generate_shape("table", 2), grid)


# --- persistence -------------------------------------------------------------------

def _records():
    return [make_record("table", 1), make_record("mug", 2, split="test")]


def test_dataset_round_trip(tmp_path):
    recs = _records()
    save_dataset(recs, tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    assert [r.id for r in ds.records] == ["table_1", "mug_2"]
    for a, b in zip(recs, ds.records):
        assert a.grid.resolution == b.grid.resolution
        assert np.array_equal(a.grid.values, b.grid.values)
        assert a.cloud.points.tobytes() == b.cloud.points.tobytes()
        assert np.array_equal(a.cloud.labels, b.cloud.labels)
        assert a.split == b.split and a.params == b.params
        assert b.shape() == generate_shape(a.category, a.seed)
    save_dataset(ds.records, tmp_path / "e")
    for f in (tmp_path / "d").iterdir():
        assert f.read_bytes() == (tmp_path / "e" / f.name).read_bytes()


def test_corrupted_magic_is_a_format_error(tmp_path):
    save_dataset(_records(), tmp_path)
    blob = bytearray((tmp_path / "table_1.grid").read_bytes())
    blob[:4] = b"XXXX"
    (tmp_path / "table_1.grid").write_bytes(bytes(blob))
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path)


def test_checksum_and_version_and_duplicate_checks(tmp_path):
    save_dataset(_records(), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())

    pts = bytearray((tmp_path / "mug_2.pts").read_bytes())
    pts[-1] ^= 1
    (tmp_path / "mug_2.pts").write_bytes(bytes(pts))
    with pytest.raises(DatasetFormatError, match="checksum"):
        load_dataset(tmp_path)

    bad = dict(manifest, version=99)
    (tmp_path / "manifest.json").write_text(json.dumps(bad))
    with pytest.raises(DatasetFormatError, match="version"):
        load_dataset(tmp_path)

    dup = dict(manifest, records=[manifest["records"][0]] * 2)
    (tmp_path / "manifest.json").write_text(json.dumps(dup))
    with pytest.raises(DatasetFormatError, match="duplicate"):
        load_dataset(tmp_path)


def test_text_point_import(tmp_path):
    f = tmp_path / "cloud.txt"
    f.write_text("0 0 0 0\n1.0 2.0 0.5 1\n# comment\n\n-1 0 0 1\n")
    cloud = import_text_points(f)
    assert cloud.labels.tolist() == [0, 1, 1]
    assert np.all(np.abs(cloud.points) <= 0.45 + 1e-6)
    f.write_text("0 0 0\n")
    with pytest.raises(DatasetFormatError):
        import_text_points(f)
