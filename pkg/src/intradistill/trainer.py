"""Training loops: single pass, K-pass intra-distillation, self-distillation.

All three share one loop. A step draws a batch, builds a fresh graph over
shared parameter leaves, records the loss for that trainer, runs a single
backward sweep and applies the optimizer. Dropout masks for pass ``i`` of
update ``x`` come from stream ``(dropout_seed, stream_id(x, i))``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Graph, NonFiniteError, RngStream, Tensor, stream_id
from .data import Dataset, TaskData, batch_stream
from .model import MlpConfig, ParameterVector, bind, draw_masks, forward, init
from .objective import intra_node, mean_of, soft_kl_node, task_loss, task_loss_node
from .schedule import AlphaSchedule, alpha_at
from .sensitivity import SensitivityReport, per_parameter_scores

OPTIMIZERS = ("sgd", "adam")
INTRA_LOSSES = ("auto", "x", "js", "mse")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite loss at update {step}" + (f": {detail}" if detail else ""))
        self.step = step


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "sgd"
    learning_rate: float = 0.1
    steps: int = 1000
    batch_size: int = 32
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.name not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.name!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass(frozen=True)
class Seeds:
    init: int = 0
    data: int = 0
    dropout: int = 0


@dataclass(frozen=True)
class TrainConfig:
    model: MlpConfig
    optimizer: OptimizerConfig = OptimizerConfig()
    schedule: AlphaSchedule | None = None
    k_passes: int = 2
    seeds: Seeds = Seeds()
    checkpoint_every: int = 100
    intra_loss: str = "auto"
    shared_masks: bool = False
    kd_task_weight: float = 1.0
    track_sensitivity: bool = False
    eval_batches: int = 100
    eval_batch_size: int = 32

    def __post_init__(self) -> None:
        if self.schedule is None:
            object.__setattr__(self, "schedule", AlphaSchedule(0.0, n_total=self.optimizer.steps))
        if self.schedule.n_total != self.optimizer.steps:
            raise ValueError(
                f"schedule n_total ({self.schedule.n_total}) must equal optimizer steps ({self.optimizer.steps})"
            )
        if not 1 <= self.k_passes < 256:
            raise ValueError(f"k_passes must be in [1, 256), got {self.k_passes}")
        if self.intra_loss not in INTRA_LOSSES:
            raise ValueError(f"intra_loss must be one of {INTRA_LOSSES}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def resolved_intra_loss(self) -> str:
        if self.intra_loss != "auto":
            return self.intra_loss
        return "x" if self.model.task == "classification" else "mse"


@dataclass(frozen=True)
class StepRecord:
    step: int
    task_loss: float
    intra_loss: float
    alpha_prime: float
    wall_ms: float


@dataclass(frozen=True)
class CheckpointRecord:
    step: int
    valid_loss: float
    valid_metric: float


@dataclass
class TrainMetrics:
    steps: list[StepRecord] = field(default_factory=list)
    checkpoints: list[CheckpointRecord] = field(default_factory=list)
    best: int = -1
    metric_name: str = "accuracy"

    @property
    def best_checkpoint(self) -> CheckpointRecord:
        return self.checkpoints[self.best]

    def valid_loss_at(self, step: int) -> float:
        for c in self.checkpoints:
            if c.step == step:
                return c.valid_loss
        raise KeyError(f"no checkpoint at update {step}")


@dataclass
class TrainResult:
    params: ParameterVector          # best checkpoint by validation loss
    final_params: ParameterVector
    metrics: TrainMetrics
    history: list[tuple[int, SensitivityReport]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# optimizers


class Sgd:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.cfg.weight_decay:
            grad = grad + self.cfg.weight_decay * theta
        return theta - self.cfg.learning_rate * grad


class Adam:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        c = self.cfg
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        if c.weight_decay:
            grad = grad + c.weight_decay * theta
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad * grad
        m_hat = self.m / (1.0 - c.beta1**self.t)
        v_hat = self.v / (1.0 - c.beta2**self.t)
        return theta - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def make_optimizer(cfg: OptimizerConfig):
    return Adam(cfg) if cfg.name == "adam" else Sgd(cfg)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(params: ParameterVector, dataset: Dataset) -> dict[str, float]:
    """Evaluation-mode loss plus accuracy (classification) or MSE (regression)."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    out = forward(params, dataset.x).value
    task = params.config.task
    loss = task_loss(out, dataset.y, task)
    if task == "classification":
        return {"loss": loss, "accuracy": float(np.mean(out.argmax(axis=1) == dataset.y))}
    return {"loss": loss, "mse": loss}


def predict_probs(params: ParameterVector, x: np.ndarray) -> np.ndarray:
    return np.exp(forward(params, x).value)


# ---------------------------------------------------------------------------
# shared loop

# (graph, leaves, params, xb, yb, update) -> (root, task mean, intra, alpha')
StepLoss = Callable[[Graph, list, ParameterVector, np.ndarray, np.ndarray, int], tuple[Tensor, float, float, float]]


def _masks(config: TrainConfig, rows: int, update: int, pass_index: int):
    rng = RngStream(config.seeds.dropout, stream_id(update, pass_index))
    return draw_masks(config.model, rows, rng)


def _loop(config: TrainConfig, data: TaskData, step_loss: StepLoss, initial: ParameterVector | None = None) -> TrainResult:
    params = initial if initial is not None else init(config.model, config.seeds.init)
    if params.config != config.model:
        raise ValueError("initial parameters do not match the model config")
    opt = make_optimizer(config.optimizer)
    batches = batch_stream(len(data.train), config.optimizer.batch_size, config.seeds.data)
    metrics = TrainMetrics(metric_name="accuracy" if config.model.task == "classification" else "mse")
    history: list[tuple[int, SensitivityReport]] = []
    best_params = params
    best_loss = math.inf
    total = config.optimizer.steps
    theta = params.flat()
    for update in range(total):
        started = time.perf_counter()
        xb, yb = data.train.take(next(batches))
        g = Graph()
        leaves = bind(params, g)
        try:
            root, task_mean, intra, alpha_prime = step_loss(g, leaves, params, xb, yb, update)
            grads = g.backward(root, wrt=leaves)
        except (NonFiniteError, FloatingPointError) as exc:
            raise TrainingDiverged(update, str(exc)) from exc
        if not math.isfinite(root.item()):
            raise TrainingDiverged(update)
        grad = np.concatenate([grads[t].reshape(-1) for t in leaves])
        theta = opt.step(theta, grad)
        if not np.all(np.isfinite(theta)):
            raise TrainingDiverged(update, "parameters became non-finite")
        params = params.with_flat(theta)
        wall = (time.perf_counter() - started) * 1e3
        metrics.steps.append(StepRecord(update, task_mean, intra, alpha_prime, wall))
        done = update + 1
        if done % config.checkpoint_every == 0 or done == total:
            ev = evaluate(params, data.valid)
            metrics.checkpoints.append(CheckpointRecord(done, ev["loss"], ev[metrics.metric_name]))
            if ev["loss"] < best_loss:
                best_loss = ev["loss"]
                best_params = params
                metrics.best = len(metrics.checkpoints) - 1
            if config.track_sensitivity:
                pool = data.train.sample_batches(config.eval_batches, config.eval_batch_size, config.seeds.data)
                history.append((done, per_parameter_scores(params, pool)))
    return TrainResult(best_params, params, metrics, history)


def train_standard(config: TrainConfig, data: TaskData) -> TrainResult:
    """Single dropout pass per update, plain task loss."""
    task = config.model.task

    def step_loss(g, leaves, params, xb, yb, update):
        out = forward(params, xb, _masks(config, len(xb), update, 0), g, leaves)
        loss = task_loss_node(g, out, yb, task)
        return loss, loss.item(), 0.0, 0.0

    return _loop(config, data, step_loss)


def train_intra_distill(config: TrainConfig, data: TaskData) -> TrainResult:
    """K dropout passes per update; mean task loss plus alpha' times the
    intra loss between the K outputs, backpropagated once."""
    if config.k_passes < 2:
        raise ValueError(f"intra-distillation needs k_passes >= 2, got {config.k_passes}")
    task = config.model.task
    kind = config.resolved_intra_loss

    def step_loss(g, leaves, params, xb, yb, update):
        all_masks = [
            _masks(config, len(xb), update, 0 if config.shared_masks else i) for i in range(config.k_passes)
        ]
        outs = [forward(params, xb, m, g, leaves) for m in all_masks]
        task_terms = [task_loss_node(g, o, yb, task) for o in outs]
        task_mean = mean_of(g, task_terms)
        intra = intra_node(g, outs, kind)
        alpha_prime = alpha_at(config.schedule, update)
        root = g.add(task_mean, g.scale(intra, alpha_prime))
        return root, task_mean.item(), intra.item(), alpha_prime

    return _loop(config, data, step_loss)


def train_self_distill(config: TrainConfig, data: TaskData, teacher: ParameterVector) -> TrainResult:
    """Student minimises w * NLL(y) + KL(teacher || student), teacher frozen
    in evaluation mode, w = ``kd_task_weight`` (1 by default)."""
    if config.model.task != "classification":
        raise ValueError("self-distillation is defined for classification")
    if teacher.config.layer_dims != config.model.layer_dims:
        raise ValueError(
            f"teacher layout {teacher.config.layer_dims} does not match student {config.model.layer_dims}"
        )
    w = config.kd_task_weight

    def step_loss(g, leaves, params, xb, yb, update):
        out = forward(params, xb, _masks(config, len(xb), update, 0), g, leaves)
        kd = soft_kl_node(g, predict_probs(teacher, xb), out)
        nll = task_loss_node(g, out, yb, "classification")
        root = g.add(g.scale(nll, w), kd)
        return root, nll.item(), kd.item(), 0.0

    return _loop(config, data, step_loss)


# ---------------------------------------------------------------------------
# metric files


def _num(x: float) -> str:
    return f"{x:.17g}"


def write_metrics(path, metrics: TrainMetrics, wall_clock: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["step,task_loss_mean,intra_loss,alpha_prime,wall_ms"]
    for r in metrics.steps:
        wall = _num(r.wall_ms) if wall_clock else "0"
        lines.append(f"{r.step},{_num(r.task_loss)},{_num(r.intra_loss)},{_num(r.alpha_prime)},{wall}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_checkpoint_metrics(path, metrics: TrainMetrics) -> Path:
    path = Path(path)
    lines = [f"step,valid_loss,valid_{metrics.metric_name},is_best"]
    for i, c in enumerate(metrics.checkpoints):
        lines.append(f"{c.step},{_num(c.valid_loss)},{_num(c.valid_metric)},{int(i == metrics.best)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_metrics(path) -> list[dict[str, float]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metrics file not found: {path}")
    head, *rows = path.read_text().splitlines()
    keys = head.split(",")
    return [dict(zip(keys, map(float, r.split(",")))) for r in rows if r]


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seeds=Seeds(seed, seed, seed))
