"""Divergences and the losses built from them.

Everything is in nats. Multi-pass divergences clamp probabilities at
``DIVERGENCE_EPS`` before taking logs and average over batch rows. The
plain :func:`kl` is strict instead and refuses zero-support violations.

The generalized Jeffrey divergence of K distributions is
``sum_i sum_j KL(p_i||p_j) + KL(p_j||p_i)``; the X-divergence never exceeds
it divided by ``K**2``, and :func:`divergence_halves` exposes the two
one-directional pieces of that bound separately.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .autodiff import DIVERGENCE_EPS, Graph, ShapeError, Tensor

NORMALIZATION_TOL = 1e-9


class ZeroSupportError(ValueError):
    """KL(p||q) is infinite: q vanishes where p does not."""


@dataclass(frozen=True)
class DistributionBatch:
    """K per-pass categorical distributions over a batch, shape (K, rows, dims)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise ShapeError(f"DistributionBatch expects (K, rows, dims), got shape {p.shape}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if np.any(np.abs(p.sum(axis=2) - 1.0) > NORMALIZATION_TOL):
            raise ValueError("every (pass, row) slice must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_log_probs(cls, log_probs) -> "DistributionBatch":
        return cls(np.exp(np.asarray(log_probs, dtype=np.float64)))

    @property
    def k(self) -> int:
        return self.probs.shape[0]

    @property
    def rows(self) -> int:
        return self.probs.shape[1]

    @property
    def dims(self) -> int:
        return self.probs.shape[2]

    def permuted(self, order: Sequence[int]) -> "DistributionBatch":
        return DistributionBatch(self.probs[list(order)])


def _require_multi(d: DistributionBatch) -> None:
    if d.k < 2:
        raise ValueError(f"need at least two passes, got K={d.k}")


def kl(p, q) -> float:
    """KL(p || q) with 0 * log(0/q) = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"kl: shape {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] <= 0):
        raise ZeroSupportError("kl: q has zero mass where p is positive")
    ps, qs = p[support], q[support]
    return float(np.sum(ps * (np.log(ps) - np.log(qs))))


def x_divergence(d: DistributionBatch, eps: float = DIVERGENCE_EPS) -> float:
    """(1/K) sum_i KL(p_i||pbar) + KL(pbar||p_i), averaged over rows."""
    _require_multi(d)
    return kernels.x_divergence(d.probs, eps)[0]


def x_divergence_grad(d: DistributionBatch, eps: float = DIVERGENCE_EPS) -> np.ndarray:
    """Gradient of :func:`x_divergence` with each probability treated as free."""
    _require_multi(d)
    return kernels.x_divergence(d.probs, eps)[1]


def js_divergence(d: DistributionBatch, eps: float = DIVERGENCE_EPS) -> float:
    """(1/K) sum_i KL(p_i||pbar), averaged over rows."""
    _require_multi(d)
    return kernels.js_divergence(d.probs, eps)[0]


def generalized_jeffrey(d: DistributionBatch, eps: float = DIVERGENCE_EPS) -> float:
    _require_multi(d)
    return 2.0 * kernels.pairwise_kl_sum(d.probs, eps)


@dataclass(frozen=True)
class DivergenceHalves:
    forward: float          # (1/K) sum_i KL(p_i || pbar)
    reverse: float          # (1/K) sum_i KL(pbar || p_i)
    forward_bound: float    # (1/K^2) sum_ij KL(p_i || p_j)
    reverse_bound: float    # (1/K^2) sum_ij KL(p_j || p_i)


def divergence_halves(d: DistributionBatch, eps: float = DIVERGENCE_EPS) -> DivergenceHalves:
    _require_multi(d)
    pair = kernels.pairwise_kl_sum(d.probs, eps) / d.k**2
    # the double sum is symmetric under swapping i and j, so both bounds coincide
    return DivergenceHalves(
        forward=kernels.js_divergence(d.probs, eps)[0],
        reverse=kernels.reverse_half(d.probs, eps),
        forward_bound=pair,
        reverse_bound=pair,
    )


def mse_intra(outputs) -> float:
    """(1/K) sum_i mean_rows (o_i - obar)^2 for outputs of shape (K, rows[, dims])."""
    o = np.asarray(outputs, dtype=np.float64)
    if o.ndim < 2 or o.shape[0] < 2:
        raise ValueError(f"mse_intra needs (K>=2, rows, ...) outputs, got shape {o.shape}")
    o = o.reshape(o.shape[0], o.shape[1], -1)
    dev = o - o.mean(axis=0)
    return float((dev**2).mean(axis=(1, 2)).mean())


def task_loss(output, targets, task: str) -> float:
    """Mean NLL of integer labels under row log-probs, or mean squared error."""
    output = np.asarray(output, dtype=np.float64)
    if task == "classification":
        labels = _check_labels(targets, output)
        return float(-output[np.arange(len(labels)), labels].mean())
    if task == "regression":
        t = np.asarray(targets, dtype=np.float64).reshape(output.shape)
        return float(((output - t) ** 2).mean())
    raise ValueError(f"unknown task {task!r}")


def _check_labels(targets, log_probs: np.ndarray) -> np.ndarray:
    labels = np.asarray(targets)
    if labels.ndim != 1 or labels.shape[0] != log_probs.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match outputs {log_probs.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= log_probs.shape[1]):
        raise ValueError(f"label out of range [0, {log_probs.shape[1]})")
    return labels.astype(np.int64)


@dataclass(frozen=True)
class LossValue:
    value: float
    task_losses: tuple[float, ...]
    intra: float
    alpha_prime: float
    breakdown: dict = field(default_factory=dict)


def composite_loss(task_losses: Sequence[float], intra: float, alpha_prime: float) -> LossValue:
    losses = tuple(float(x) for x in task_losses)
    if not losses:
        raise ValueError("need at least one task loss")
    if alpha_prime < 0:
        raise ValueError(f"alpha_prime must be >= 0, got {alpha_prime}")
    mean_task = sum(losses) / len(losses)
    value = mean_task + alpha_prime * intra
    return LossValue(
        value=value,
        task_losses=losses,
        intra=float(intra),
        alpha_prime=float(alpha_prime),
        breakdown={"task_mean": mean_task, "intra": float(intra), "alpha_prime": float(alpha_prime)},
    )


# ---------------------------------------------------------------------------
# graph builders used by the trainers


def nll_node(graph: Graph, log_probs: Tensor, labels) -> Tensor:
    labels = _check_labels(labels, log_probs.value)
    onehot = np.zeros(log_probs.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = graph.sum(graph.multiply(log_probs, graph.leaf(onehot)))
    return graph.scale(picked, -1.0 / log_probs.shape[0])


def mse_node(graph: Graph, output: Tensor, targets) -> Tensor:
    t = np.asarray(targets, dtype=np.float64).reshape(output.shape)
    return graph.mean(graph.square(graph.subtract(output, graph.leaf(t))))


def task_loss_node(graph: Graph, output: Tensor, targets, task: str) -> Tensor:
    if task == "classification":
        return nll_node(graph, output, targets)
    return mse_node(graph, output, targets)


def soft_kl_node(graph: Graph, teacher_probs: np.ndarray, student_log_probs: Tensor) -> Tensor:
    """Row-averaged KL(teacher || student) with a fixed teacher."""
    pt = np.asarray(teacher_probs, dtype=np.float64)
    rows = student_log_probs.shape[0]
    entropy_term = float(np.sum(pt * np.log(np.maximum(pt, DIVERGENCE_EPS)))) / rows
    cross = graph.scale(graph.sum(graph.multiply(student_log_probs, graph.leaf(pt))), -1.0 / rows)
    return graph.add(cross, graph.leaf(entropy_term))


def mean_of(graph: Graph, terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = graph.add(total, t)
    return graph.scale(total, 1.0 / len(terms))


def mse_intra_node(graph: Graph, outputs: Sequence[Tensor]) -> Tensor:
    center = mean_of(graph, outputs)
    spreads = [graph.mean(graph.square(graph.subtract(o, center))) for o in outputs]
    return mean_of(graph, spreads)


def intra_node(graph: Graph, outputs: Sequence[Tensor], kind: str) -> Tensor:
    if kind == "x":
        return graph.record("x-divergence", *outputs)
    if kind == "js":
        return graph.record("js-divergence", *outputs)
    if kind == "mse":
        return mse_intra_node(graph, outputs)
    raise ValueError(f"unknown intra loss {kind!r}")
