"""The meta-learner: shape -> task distribution -> predicted learner weights.

``f1`` maps each per-point feature ``[f_v, x]`` to a mean and a log-variance
(two ReLU MLP heads), mean-pooled over the points into one Gaussian per
shape.  A latent drawn from it is fed to ``f2``, whose output, scaled by
``arch.weight_gain``, is the flat ``theta_m`` vector of the learner.

Three variants share this module:

* ``"vae"``    full model, stochastic latent during training
* ``"direct"`` mean head only; the latent is the mean (no sampling)
* ``"none"``   no meta path at all; ``theta_m`` is zero and a shared
  ``theta_base`` vector is trained conventionally instead
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from . import numerics as nx
from .learner import ArchitectureConfig, ArchitectureError, ShapeTable, embed_shape, init_encoder
from .numerics import NumericsError, Tensor, ops

VARIANTS = ("vae", "direct", "none")


@dataclass
class MetaParams:
    arch: ArchitectureConfig
    variant: str
    tensors: dict[str, Tensor]

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ArchitectureError(f"unknown meta-learner variant {self.variant!r}")

    @property
    def table(self) -> ShapeTable:
        return ShapeTable.for_arch(self.arch)

    def encoder(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k.startswith("encoder.")}

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def set_trainable(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        return h.hexdigest()

    def copy(self) -> "MetaParams":
        return MetaParams(self.arch, self.variant,
                          {k: nx.Tensor(v.data, requires_grad=v.requires_grad, dtype=v.data.dtype)
                           for k, v in self.tensors.items()})


def _dense_stack(prefix: str, dims: list[int], rng: np.random.Generator) -> dict[str, Tensor]:
    out = {}
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        out[f"{prefix}.{i}.weight"] = nx.tensor(rng.normal(0.0, math.sqrt(2.0 / n_in), (n_out, n_in)),
                                                requires_grad=True)
        out[f"{prefix}.{i}.bias"] = nx.tensor(np.zeros(n_out), requires_grad=True)
    return out


def _layers(tensors: Mapping[str, Tensor], prefix: str) -> Iterator[tuple[Tensor, Tensor]]:
    i = 0
    while f"{prefix}.{i}.weight" in tensors:
        yield tensors[f"{prefix}.{i}.weight"], tensors[f"{prefix}.{i}.bias"]
        i += 1


def _run_stack(x: Tensor, tensors: Mapping[str, Tensor], prefix: str) -> Tensor:
    layers = list(_layers(tensors, prefix))
    for i, (w, b) in enumerate(layers):
        x = ops.linear(x, w, b)
        if i < len(layers) - 1:
            x = ops.relu(x)
    return x


def init_estimator(arch: ArchitectureConfig, rng: np.random.Generator,
                   variance: bool = True) -> dict[str, Tensor]:
    """The f1 heads alone: ``[m + 3] -> f1_hidden -> [v]`` for the mean (and log-variance)."""
    dims = [arch.point_dim, *arch.f1_hidden, arch.latent_dim]
    out = _dense_stack("f1.mean", dims, rng)
    if variance:
        out.update(_dense_stack("f1.logvar", dims, rng))
    return out


def init_meta_params(arch: ArchitectureConfig, variant: str, rng: np.random.Generator) -> MetaParams:
    """Random initialization.

    ``f2``'s last-layer bias starts at a He-initialized predictor vector
    (divided by the output gain) and its last weight matrix is scaled down, so
    the initial ``theta_m`` is a sensible network that the latent perturbs.
    """
    tensors = init_encoder(arch, rng)
    table = ShapeTable.for_arch(arch)
    if variant == "none":
        tensors["theta_base"] = nx.tensor(table.he_init(rng), requires_grad=True)
        return MetaParams(arch, variant, tensors)
    tensors.update(init_estimator(arch, rng, variance=variant == "vae"))
    f2_dims = [arch.latent_dim, *arch.f2_hidden, table.size]
    f2 = _dense_stack("f2", f2_dims, rng)
    last = len(f2_dims) - 2
    f2[f"f2.{last}.weight"].data *= 0.1
    f2[f"f2.{last}.bias"].data[:] = table.he_init(rng) / arch.weight_gain
    tensors.update(f2)
    return MetaParams(arch, variant, tensors)


def task_features(embedding: Tensor, points) -> Tensor:
    """``[f_v, x]`` rows for a set of points."""
    coords = points if isinstance(points, Tensor) else nx.tensor(np.asarray(points).reshape(-1, 3))
    return ops.point_features(embedding, coords)


def estimate_task_distribution(features: Tensor, params: MetaParams) -> tuple[Tensor, Tensor | None]:
    """Per-row f1 heads, mean-pooled: returns (mu, log_variance); log_variance is None for ``direct``."""
    if features.data.ndim != 2 or features.shape[0] == 0:
        raise NumericsError(f"need a non-empty [n, m+3] feature matrix, got {features.shape}")
    if params.variant == "none":
        raise ArchitectureError("variant 'none' has no task distribution")
    mu = ops.mean_rows(_run_stack(features, params.tensors, "f1.mean"))
    if params.variant == "direct":
        return mu, None
    return mu, ops.mean_rows(_run_stack(features, params.tensors, "f1.logvar"))


def sample_latent(mu: Tensor, log_variance: Tensor | None, mode: str,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Reparameterized draw ``mu + exp(log_variance / 2) * eps``; ``deterministic`` returns ``mu``."""
    if mode == "deterministic" or log_variance is None:
        return mu
    if mode != "stochastic":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        raise ValueError("stochastic sampling needs an explicit rng stream")
    eps = nx.tensor(rng.standard_normal(mu.size))
    return ops.add(mu, ops.mul(ops.exp(ops.scale(log_variance, 0.5)), eps))


def predict_learner_weights(latent: Tensor, params: MetaParams) -> Tensor:
    """``theta_m = gain * f2(latent)``, a flat vector laid out by the learner's shape table."""
    if latent.shape != (params.arch.latent_dim,):
        raise ArchitectureError(f"latent has shape {latent.shape}, expected ({params.arch.latent_dim},)")
    out = ops.scale(_run_stack(latent, params.tensors, "f2"), params.arch.weight_gain)
    if out.size != params.table.size:
        raise ArchitectureError(f"f2 produces {out.size} weights, learner needs {params.table.size}")
    return out


@dataclass
class MetaOutput:
    embedding: Tensor
    theta_m: Tensor
    mu: Tensor | None = None
    log_variance: Tensor | None = None
    latent: Tensor | None = None


def meta_forward(params: MetaParams, grid, task_points, mode: str = "deterministic",
                 rng: np.random.Generator | None = None) -> MetaOutput:
    """Shape -> embedding -> (mu, log_variance) -> latent -> theta_m."""
    f_v = embed_shape(grid, params.encoder(), params.arch)
    if params.variant == "none":
        return MetaOutput(f_v, nx.tensor(np.zeros(params.table.size)))
    mu, logvar = estimate_task_distribution(task_features(f_v, task_points), params)
    latent = sample_latent(mu, logvar, mode, rng)
    return MetaOutput(f_v, predict_learner_weights(latent, params), mu, logvar, latent)
