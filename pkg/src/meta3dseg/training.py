"""Meta-training, fine-tuning and the weight-setting ablation harness."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .geometry import ShapeRecord, cell_centers
from .learner import ArchitectureConfig, LearnerWeights, ShapeTable, get_preset, predict_points
from .metalearner import MetaParams, init_meta_params, meta_forward
from .numerics import Graph, Tensor, ops

log = logging.getLogger(__name__)

SETTINGS = {"A": "none", "B": "direct", "C": "vae"}


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    meta_epochs: int = 200
    finetune_steps: int = 200
    batch: int = 4
    seed: int = 0
    kl_weight: float = 0.0
    sampling: str = "stochastic"
    preset: str = "desk"
    task_points: int = 256
    finetune_learning_rate: float | None = None
    architecture: ArchitectureConfig | None = None  # overrides ``preset`` when set

    def __post_init__(self):
        if self.learning_rate <= 0 or (self.finetune_learning_rate or 1.0) <= 0:
            raise ValueError("learning rates must be positive")
        if self.meta_epochs < 1 or self.batch < 1 or self.task_points < 1:
            raise ValueError("meta_epochs, batch and task_points must be positive")
        if self.finetune_steps < 0 or self.kl_weight < 0:
            raise ValueError("finetune_steps and kl_weight must be non-negative")
        if self.sampling not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")

    @property
    def arch(self) -> ArchitectureConfig:
        return self.architecture or get_preset(self.preset)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.to_dict() if self.architecture else None
        return d


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    checkpoint_digest: str = ""

    def json_lines(self, key: str = "epoch") -> str:
        return "".join(json.dumps({key: i + 1, "loss": loss, "seconds": round(sec, 4)}) + "\n"
                       for i, (loss, sec) in enumerate(zip(self.losses, self.seconds)))


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named stream derived from the master seed."""
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, key])


# --- losses ------------------------------------------------------------------------

def reconstruction_loss(predictions: Tensor, labels) -> Tensor:
    """Mean squared error between predicted occupancy and inside/outside labels."""
    y = np.asarray(labels).reshape(-1)
    if predictions.size != y.size:
        raise ValueError(f"{predictions.size} predictions for {y.size} samples")
    if y.size == 0:
        raise ValueError("empty sample list")
    pred = predictions if predictions.data.ndim == 1 else ops.reshape(predictions, (y.size,))
    return ops.mean(ops.square(ops.sub(pred, nx.tensor(y))))


def kl_term(mu: Tensor, log_variance: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - log sigma^2 - 1)."""
    inner = ops.sub(ops.add(ops.square(mu), ops.exp(log_variance)),
                    ops.add(log_variance, nx.tensor(np.ones(mu.size))))
    return ops.scale(ops.sum(inner), 0.5)


# --- per-shape plumbing --------------------------------------------------------------

@dataclass
class TaskData:
    record: ShapeRecord
    grid: Tensor
    task_points: np.ndarray
    coords: Tensor
    labels: np.ndarray


def prepare_tasks(records: Sequence[ShapeRecord], config: TrainConfig) -> list[TaskData]:
    from .learner import grid_tensor

    out = []
    centers: dict[int, Tensor] = {}
    for r in records:
        res = r.grid.resolution
        if res not in centers:
            centers[res] = nx.tensor(cell_centers(res))
        out.append(TaskData(r, grid_tensor(r.grid), r.cloud.points[:config.task_points].astype(np.float64),
                            centers[res], r.grid.values.reshape(-1).astype(np.float64)))
    return out


def _shape_loss(params: MetaParams, task: TaskData, mode: str, rng, config: TrainConfig) -> Tensor:
    out = meta_forward(params, task.grid, task.task_points, mode, rng)
    if params.variant == "none":
        weights = LearnerWeights(out.theta_m, params.tensors["theta_base"], params.table)
    else:
        weights = LearnerWeights(out.theta_m, nx.tensor(np.zeros(params.table.size)), params.table)
    _, occ, _ = predict_points(out.embedding, task.coords, weights)
    loss = reconstruction_loss(occ, task.labels)
    if config.kl_weight > 0 and out.log_variance is not None:
        loss = ops.add(loss, ops.scale(kl_term(out.mu, out.log_variance), config.kl_weight))
    return loss


def _named_grads(params: dict[str, Tensor], grads: dict[Tensor, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: grads[t] for name, t in params.items() if t in grads}


class _DivergenceGuard:
    def __init__(self, patience: int = 50, factor: float = 10.0):
        self.patience, self.factor = patience, factor
        self.initial: float | None = None
        self.bad = 0

    def check(self, loss: float, where: str) -> None:
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} at {where}")
        if self.initial is None:
            self.initial = loss
            return
        self.bad = self.bad + 1 if loss > self.factor * self.initial else 0
        if self.bad >= self.patience:
            raise DivergenceError(f"loss above {self.factor}x its initial value "
                                  f"({self.initial:.4g}) for {self.patience} steps at {where}")


def meta_train(records: Sequence[ShapeRecord], config: TrainConfig, variant: str = "vae",
               params: MetaParams | None = None,
               on_epoch: Callable[[int, float], None] | None = None) -> tuple[MetaParams, TrainReport]:
    """Optimize all meta-learner parameters over tasks (one shape = one task).

    Each step draws a batch of shapes, evaluates the learner with
    ``theta_l = 0`` on every shape's occupancy samples, averages the losses and
    takes one Adam step.  Variant ``"none"`` trains the encoder and a shared
    ``theta_base`` instead (conventional pre-training).
    """
    if not records:
        raise TrainingError("meta_train needs a non-empty training set")
    arch = config.arch
    if params is None:
        params = init_meta_params(arch, variant, rng_stream(config.seed, "init"))
    params.set_trainable(True)
    tasks = prepare_tasks(records, config)
    batch_rng = rng_stream(config.seed, "batches")
    latent_rng = rng_stream(config.seed, "latent")
    mode = config.sampling if variant == "vae" else "deterministic"
    state = nx.AdamState(learning_rate=config.learning_rate)
    guard = _DivergenceGuard()
    report = TrainReport()
    for epoch in range(config.meta_epochs):
        t0 = time.perf_counter()
        order = batch_rng.permutation(len(tasks))
        losses = []
        for start in range(0, len(order), config.batch):
            members = [tasks[i] for i in order[start:start + config.batch]]
            graph = Graph()
            with graph.recording():
                per_shape = [_shape_loss(params, t, mode, latent_rng, config) for t in members]
                total = per_shape[0]
                for extra in per_shape[1:]:
                    total = ops.add(total, extra)
                loss = ops.scale(total, 1.0 / len(members))
            value = loss.item()
            guard.check(value, f"epoch {epoch + 1}")
            grads = nx.backward(graph, loss)
            nx.adam_step(params.tensors, _named_grads(params.tensors, grads), state)
            losses.append(value)
        report.losses.append(float(np.mean(losses)))
        report.seconds.append(time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch + 1, report.losses[-1])
        log.debug("epoch %d loss %.5f", epoch + 1, report.losses[-1])
    report.initial_loss = report.losses[0]
    report.final_loss = report.losses[-1]
    report.checkpoint_digest = params.digest()
    return params, report


# --- fine-tuning -----------------------------------------------------------------------

@dataclass
class FineTuned:
    """A frozen meta-learner plus a fine-tuned ``theta_l`` shared by the target category."""

    meta: MetaParams
    theta_l: np.ndarray
    theta_m: np.ndarray  # [n_targets, w], one row per target shape
    shape_ids: list[str]
    meta_digest: str
    task_points: int = 256

    def weights_for(self, grid, task_points) -> tuple[Tensor, LearnerWeights]:
        out = meta_forward(self.meta, grid, task_points, "deterministic")
        return out.embedding, LearnerWeights(out.theta_m.detach(), nx.tensor(self.theta_l), self.meta.table)

    def segment(self, record: ShapeRecord, points) -> tuple[np.ndarray, np.ndarray]:
        """Branch labels and occupancies for query ``points`` of ``record``'s shape."""
        f_v, weights = self.weights_for(record.grid, record.cloud.points[:self.task_points])
        _, occ, labels = predict_points(f_v, points, weights)
        return labels.astype(np.int64), occ.data.copy()


def _frozen_inputs(meta: MetaParams, tasks: Sequence[TaskData]) -> list[tuple[Tensor, Tensor]]:
    out = []
    for t in tasks:
        m = meta_forward(meta, t.grid, t.task_points, "deterministic")
        out.append((m.embedding.detach(), m.theta_m.detach()))
    return out


def finetune_loss(frozen, tasks, theta_l: Tensor, table: ShapeTable) -> Tensor:
    total = None
    for (f_v, theta_m), t in zip(frozen, tasks):
        _, occ, _ = predict_points(f_v, t.coords, LearnerWeights(theta_m, theta_l, table))
        loss = reconstruction_loss(occ, t.labels)
        total = loss if total is None else ops.add(total, loss)
    return ops.scale(total, 1.0 / len(tasks))


def fine_tune(meta: MetaParams, targets: Sequence[ShapeRecord], config: TrainConfig,
              theta_l_init: np.ndarray | None = None) -> tuple[FineTuned, TrainReport]:
    """Freeze the meta-learner and encoder; optimize ``theta_l`` over the target shapes.

    ``theta_m`` is computed once per target in deterministic mode.  ``theta_l``
    starts at zero, or at ``theta_base`` for the conventional (``"none"``) variant.
    """
    if not targets:
        raise TrainingError("fine_tune needs at least one target shape")
    if targets[0].grid.resolution != meta.arch.resolution:
        raise TrainingError(f"target grids have resolution {targets[0].grid.resolution}, "
                            f"meta-learner preset {meta.arch.name} expects {meta.arch.resolution}")
    before = meta.digest()
    meta.set_trainable(False)
    tasks = prepare_tasks(targets, config)
    frozen = _frozen_inputs(meta, tasks)
    table = meta.table
    if theta_l_init is None:
        theta_l_init = meta.tensors["theta_base"].data if meta.variant == "none" else np.zeros(table.size)
    theta_l = nx.tensor(theta_l_init, requires_grad=True)
    lr = config.finetune_learning_rate or config.learning_rate
    state = nx.AdamState(learning_rate=lr)
    guard = _DivergenceGuard()
    report = TrainReport()
    for step in range(config.finetune_steps):
        t0 = time.perf_counter()
        graph = Graph()
        with graph.recording():
            loss = finetune_loss(frozen, tasks, theta_l, table)
        value = loss.item()
        guard.check(value, f"fine-tune step {step + 1}")
        grads = nx.backward(graph, loss)
        nx.adam_step({"theta_l": theta_l}, {"theta_l": grads[theta_l]}, state)
        report.losses.append(value)
        report.seconds.append(time.perf_counter() - t0)
    final = finetune_loss(frozen, tasks, nx.tensor(theta_l.data), table).item()
    report.initial_loss = report.losses[0] if report.losses else final
    report.final_loss = final
    if meta.digest() != before:
        raise TrainingError("meta-learner parameters changed during fine-tuning")
    result = FineTuned(meta, theta_l.data.copy(), np.stack([tm.data for _, tm in frozen]),
                       [t.id for t in targets], before, config.task_points)
    return result, report


# --- weight settings ---------------------------------------------------------------------

@dataclass
class SettingResult:
    setting: str
    meta: MetaParams
    finetuned: FineTuned
    meta_report: TrainReport
    finetune_report: TrainReport


def run_weight_setting(setting: str, train: Sequence[ShapeRecord], targets: Sequence[ShapeRecord],
                       config: TrainConfig) -> SettingResult:
    """A: conventional pre-train + fine-tune; B: deterministic meta-learner; C: full VAE meta-learner.

    All three share architecture, budgets and seeds.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown weight setting {setting!r}; expected A, B or C")
    meta, meta_report = meta_train(train, config, variant=SETTINGS[setting])
    finetuned, ft_report = fine_tune(meta, targets, config)
    return SettingResult(setting, meta, finetuned, meta_report, ft_report)
