"""Synthetic tasks: Gaussian class clusters and random-teacher regression."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    task: str
    n_classes: int = 0

    def __post_init__(self) -> None:
        if len(self.x) != len(self.y):
            raise ValueError(f"x has {len(self.x)} rows but y has {len(self.y)}")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.task == "classification" else 1

    def take(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.x[idx], self.y[idx]

    def sample_batches(self, count: int, batch_size: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """``count`` batches drawn without replacement inside each batch."""
        rng = np.random.default_rng(seed)
        size = min(batch_size, len(self))
        return [self.take(rng.choice(len(self), size, replace=False)) for _ in range(count)]


@dataclass(frozen=True)
class TaskData:
    train: Dataset
    valid: Dataset


def batch_stream(n: int, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Endless index batches from reshuffled epochs; short tails are dropped."""
    rng = np.random.default_rng(seed)
    size = min(batch_size, n)
    while True:
        perm = rng.permutation(n)
        for lo in range(0, n - size + 1, size):
            yield perm[lo : lo + size]


def _split(x, y, valid_fraction, rng, task, n_classes) -> TaskData:
    n = len(x)
    n_valid = max(1, int(round(valid_fraction * n)))
    perm = rng.permutation(n)
    va, tr = perm[:n_valid], perm[n_valid:]
    return TaskData(
        Dataset(x[tr], y[tr], task, n_classes),
        Dataset(x[va], y[va], task, n_classes),
    )


def make_classification(
    samples: int = 1000,
    dims: int = 8,
    classes: int = 4,
    margin: float = 2.0,
    noise: float = 1.0,
    clusters_per_class: int = 1,
    label_noise: float = 0.0,
    valid_fraction: float = 0.25,
    seed: int = 0,
) -> TaskData:
    """Points around random class centres at distance ~``margin`` from the origin."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((classes * clusters_per_class, dims))
    centres *= margin / np.linalg.norm(centres, axis=1, keepdims=True)
    which = rng.integers(0, len(centres), samples)
    y = which % classes
    x = centres[which] + noise * rng.standard_normal((samples, dims))
    if label_noise > 0:
        flip = rng.random(samples) < label_noise
        y = np.where(flip, rng.integers(0, classes, samples), y)
    return _split(x, y.astype(np.int64), valid_fraction, rng, "classification", classes)


def make_regression(
    samples: int = 1000,
    dims: int = 8,
    teacher_hidden: int = 16,
    noise: float = 0.1,
    valid_fraction: float = 0.25,
    seed: int = 0,
) -> TaskData:
    """Targets from a fixed random tanh network plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((dims, teacher_hidden)) / math.sqrt(dims)
    b1 = 0.1 * rng.standard_normal(teacher_hidden)
    w2 = rng.standard_normal(teacher_hidden) / math.sqrt(teacher_hidden)
    x = rng.standard_normal((samples, dims))
    y = np.tanh(x @ w1 + b1) @ w2 + noise * rng.standard_normal(samples)
    return _split(x, y, valid_fraction, rng, "regression", 0)
