"""The per-shape segmentation learner.

A 3D conv encoder turns the occupancy grid into a shape embedding ``f_v``.
Each query point ``x`` is decoded from ``[f_v, x]`` by a ReLU MLP (``g2``)
followed by a dense branch layer (``g3``).  Branch logits go through a
sigmoid; the max branch is the occupancy and the argmax branch the part label.

The predictor weights are always ``theta_m + theta_l``: ``theta_m`` comes from
the meta-learner, ``theta_l`` is the fine-tuned component.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import numerics as nx
from .geometry import OccupancyGrid
from .numerics import NumericsError, Tensor, ops


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    name: str
    resolution: int
    conv_channels: tuple[int, ...]
    decoder_dims: tuple[int, ...]  # g2 widths; the last one is q
    n_branches: int  # c
    latent_dim: int  # v
    f1_hidden: tuple[int, ...]
    f2_hidden: tuple[int, ...] = ()
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    weight_gain: float = 0.1

    def __post_init__(self):
        if 2 ** len(self.conv_channels) != self.resolution:
            raise ArchitectureError(
                f"{self.name}: resolution {self.resolution} needs {int(math.log2(self.resolution))} "
                f"stride-2 conv layers, got {len(self.conv_channels)}")
        if not self.decoder_dims or self.n_branches < 1 or self.latent_dim < 1:
            raise ArchitectureError(f"{self.name}: empty decoder, branches or latent")

    @property
    def embedding_dim(self) -> int:
        return self.conv_channels[-1]

    @property
    def point_dim(self) -> int:
        return self.embedding_dim + 3

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArchitectureConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


PRESETS = {
    # 5 conv layers (32, 64, 128, 512, 1024); predictor (1024, 256, 8); VAE heads (1024, 256)
    "paper": ArchitectureConfig("paper", 32, (32, 64, 128, 512, 1024), (1024, 256), 8, 256, (1024,)),
    "desk": ArchitectureConfig("desk", 16, (16, 32, 64, 128), (64, 32), 8, 16, (32,)),
    # small enough for exhaustive finite-difference checks
    "tiny": ArchitectureConfig("tiny", 2, (3,), (3,), 2, 2, (4,)),
}


# initial branch logit: sigmoid(-2) ~ 0.12, close to typical inside fractions
BRANCH_BIAS = -2.0


def get_preset(name: str) -> ArchitectureConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ArchitectureError(f"unknown architecture preset {name!r}; "
                                f"expected one of {', '.join(PRESETS)}") from None


# --- predictor shape table -------------------------------------------------------

@dataclass(frozen=True)
class TableEntry:
    name: str
    shape: tuple[int, ...]
    start: int

    @property
    def stop(self) -> int:
        return self.start + int(np.prod(self.shape))


@dataclass(frozen=True)
class ShapeTable:
    """Maps segments of the flat predictor vector to dense-layer weights and biases."""

    entries: tuple[TableEntry, ...]

    @classmethod
    def for_arch(cls, arch: ArchitectureConfig) -> "ShapeTable":
        dims = [arch.point_dim, *arch.decoder_dims, arch.n_branches]
        entries, offset = [], 0
        for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
            prefix = f"g2.{i}" if i < len(arch.decoder_dims) else "g3"
            for suffix, shape in (("weight", (n_out, n_in)), ("bias", (n_out,))):
                entries.append(TableEntry(f"{prefix}.{suffix}", shape, offset))
                offset += int(np.prod(shape))
        return cls(tuple(entries))

    @property
    def size(self) -> int:
        return self.entries[-1].stop

    @property
    def n_tensors(self) -> int:
        return len(self.entries)

    def layers(self) -> list[tuple[TableEntry, TableEntry]]:
        return list(zip(self.entries[0::2], self.entries[1::2]))

    def he_init(self, rng: np.random.Generator) -> np.ndarray:
        """He-normal starting point for the predictor, flattened.

        Two adjustments keep training out of its degenerate regimes:

        * the coordinate columns of the first layer use their own fan-in (3),
          otherwise the m embedding columns dwarf them and every hidden unit
          starts out constant over the cube;
        * branch rows are centred and branch biases start at ``BRANCH_BIAS``, so
          no branch wins everywhere by a constant offset and the initial
          occupancy sits near the (low) inside rate instead of 0.5, which
          otherwise drives every sigmoid into saturation within a few steps.
        """
        flat = np.zeros(self.size)
        layers = self.layers()
        for i, (w, _) in enumerate(layers):
            block = rng.normal(0.0, math.sqrt(2.0 / w.shape[1]), size=w.shape)
            if i == 0:
                block[:, -3:] = rng.normal(0.0, math.sqrt(2.0 / 3), size=(w.shape[0], 3))
            if i == len(layers) - 1:
                block -= block.mean(axis=1, keepdims=True)
            flat[w.start:w.stop] = block.ravel()
        bias = layers[-1][1]
        flat[bias.start:bias.stop] = BRANCH_BIAS
        return flat


@dataclass
class LearnerWeights:
    theta_m: Tensor
    theta_l: Tensor
    table: ShapeTable

    def __post_init__(self):
        w = self.table.size
        if self.theta_m.shape != (w,) or self.theta_l.shape != (w,):
            raise ArchitectureError(
                f"weight vectors {self.theta_m.shape}/{self.theta_l.shape} do not match table size {w}")

    def effective(self) -> Tensor:
        return ops.add(self.theta_m, self.theta_l)

    @classmethod
    def zeros(cls, table: ShapeTable) -> "LearnerWeights":
        return cls(nx.tensor(np.zeros(table.size)), nx.tensor(np.zeros(table.size)), table)


@dataclass
class PointPrediction:
    branch_activations: np.ndarray
    occupancy: float
    part_label: int


# --- encoder -----------------------------------------------------------------------

def init_encoder(arch: ArchitectureConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    c_in = 1
    for i, c_out in enumerate(arch.conv_channels):
        fan_in = c_in * arch.kernel ** 3
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in) + (arch.kernel,) * 3)
        params[f"encoder.conv{i}.weight"] = nx.tensor(w, requires_grad=True)
        params[f"encoder.conv{i}.bias"] = nx.tensor(np.zeros(c_out), requires_grad=True)
        c_in = c_out
    return params


def grid_tensor(grid: OccupancyGrid | np.ndarray) -> Tensor:
    values = grid.values if isinstance(grid, OccupancyGrid) else np.asarray(grid)
    return nx.tensor(values.reshape((1,) + values.shape))


def embed_shape(grid: OccupancyGrid | Tensor, encoder: Mapping[str, Tensor],
                arch: ArchitectureConfig) -> Tensor:
    """Conv stack (ReLU between layers, none after the last) collapsing R^3 to a length-m vector."""
    x = grid if isinstance(grid, Tensor) else grid_tensor(grid)
    if x.shape != (1,) + (arch.resolution,) * 3:
        raise ArchitectureError(f"grid shape {x.shape[1:]} does not match preset "
                                f"{arch.name} resolution {arch.resolution}")
    n = len(arch.conv_channels)
    for i in range(n):
        x = ops.conv3d(x, encoder[f"encoder.conv{i}.weight"], encoder[f"encoder.conv{i}.bias"],
                       stride=arch.stride, padding=arch.padding)
        if i < n - 1:
            x = ops.relu(x)
    return ops.reshape(x, (arch.embedding_dim,))


# --- predictor -----------------------------------------------------------------------

def point_feature(embedding: Tensor, x) -> Tensor:
    """``[f_v, x]`` for a single point."""
    x = x if isinstance(x, Tensor) else nx.tensor(np.asarray(x, dtype=np.float64).reshape(3))
    if nx.is_checked() and np.any(np.abs(x.data) > 0.5):
        raise NumericsError(f"point {x.data.tolist()} lies outside [-0.5, 0.5]^3")
    return ops.concat([embedding, x])


def predictor_logits(embedding: Tensor, coords: Tensor, weights: Tensor, table: ShapeTable) -> Tensor:
    """Branch logits ``g3(g2([f_v, x]))`` for every row of ``coords``, using flat ``weights``."""
    if weights.shape != (table.size,):
        raise ArchitectureError(f"weight vector has length {weights.size}, table expects {table.size}")
    layers = table.layers()
    h = None
    for i, (w_e, b_e) in enumerate(layers):
        w = ops.segment(weights, w_e.start, w_e.stop, w_e.shape)
        b = ops.segment(weights, b_e.start, b_e.stop)
        h = ops.point_linear(embedding, coords, w, b) if i == 0 else ops.linear(h, w, b)
        if i < len(layers) - 1:
            h = ops.relu(h)
    return h


def as_coords(points) -> Tensor:
    if isinstance(points, Tensor):
        return points
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if nx.is_checked() and np.any(np.abs(pts) > 0.5):
        raise NumericsError("query points outside [-0.5, 0.5]^3")
    return nx.tensor(pts)


def predict_points(embedding: Tensor, points, weights: LearnerWeights | Tensor,
                   table: ShapeTable | None = None) -> tuple[Tensor, Tensor, np.ndarray]:
    """Batched prediction: (branch activations [N, c], occupancy [N], part labels [N])."""
    if isinstance(weights, LearnerWeights):
        table = weights.table
        flat = weights.effective()
    else:
        flat = weights
    if table is None:
        raise ArchitectureError("a shape table is required with a flat weight vector")
    acts = ops.sigmoid(predictor_logits(embedding, as_coords(points), flat, table))
    occ, labels = ops.channel_max_rows(acts)
    return acts, occ, labels


def predict_point(embedding: Tensor, x, weights: LearnerWeights) -> PointPrediction:
    feat = point_feature(embedding, x)
    table = weights.table
    flat = weights.effective()
    layers = table.layers()
    h = feat
    for i, (w_e, b_e) in enumerate(layers):
        h = ops.linear(h, ops.segment(flat, w_e.start, w_e.stop, w_e.shape),
                       ops.segment(flat, b_e.start, b_e.stop))
        if i < len(layers) - 1:
            h = ops.relu(h)
    acts = ops.sigmoid(h)
    occ, label = ops.channel_max(acts)
    return PointPrediction(acts.data.copy(), occ.item(), label)


@dataclass
class Segmentation:
    labels: np.ndarray
    occupancy: np.ndarray
    activations: np.ndarray = field(repr=False)


def segment_shape(grid: OccupancyGrid, points, encoder: Mapping[str, Tensor],
                  weights: LearnerWeights, arch: ArchitectureConfig) -> Segmentation:
    """Embed once, then label every query point independently."""
    f_v = embed_shape(grid, encoder, arch)
    acts, occ, labels = predict_points(f_v, points, weights)
    return Segmentation(labels.astype(np.int64), occ.data.copy(), acts.data.copy())
