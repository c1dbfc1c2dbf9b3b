"""Synthetic labeled shapes, occupancy grids, point sampling and dataset files."""
from .io import (Dataset, DatasetFormatError, ShapeRecord, decode_grid, decode_points, encode_grid,
                 encode_points, import_text_points, load_dataset, save_dataset)
from .primitives import Box, Cylinder, Sphere, Torus
from .shapes import (CATEGORIES, PARAM_RANGES, PART_NAMES, GeometryError, LabeledShape,
                     OccupancyGrid, OccupancySamples, PointCloud, cell_centers, generate_shape,
                     sample_occupancy_pairs, sample_surface_points, voxelize)


def make_record(category: str, seed: int, resolution: int = 16, n_points: int = 2048,
                split: str = "train", shape_id: str | None = None) -> ShapeRecord:
    """Generate, voxelize and sample one shape into a dataset record."""
    shape = generate_shape(category, seed)
    return ShapeRecord(
        id=shape_id or f"{category}_{seed}", category=category, seed=seed, params=shape.params,
        grid=voxelize(shape, resolution), cloud=sample_surface_points(shape, n_points, seed),
        split=split, part_names=list(shape.part_names))


__all__ = [
    "Box", "CATEGORIES", "Cylinder", "Dataset", "DatasetFormatError", "GeometryError",
    "LabeledShape", "OccupancyGrid", "OccupancySamples", "PARAM_RANGES", "PART_NAMES",
    "PointCloud", "ShapeRecord", "Sphere", "Torus", "cell_centers", "decode_grid",
    "decode_points", "encode_grid", "encode_points", "generate_shape", "import_text_points",
    "load_dataset", "make_record", "sample_occupancy_pairs", "sample_surface_points",
    "save_dataset", "voxelize",
]
