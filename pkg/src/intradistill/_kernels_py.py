"""Pure numpy implementations of the hot numerical kernels.

These are the reference versions; ``_ckernels`` mirrors every function here
with explicit loops. Array arguments are float64 and C-contiguous.
"""
from __future__ import annotations

import numpy as np


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_backward(out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad - np.exp(out) * grad.sum(axis=1, keepdims=True)


def _clamped(p: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    live = p > eps
    return np.log(np.maximum(p, eps)), live


def x_divergence(p: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Row-averaged X-divergence of a (K, R, C) stack and its gradient in p."""
    k, rows, _ = p.shape
    ell, live = _clamped(p, eps)
    pbar = p.mean(axis=0)
    lbar = np.log(np.maximum(pbar, eps))
    # sum_i (p_i - pbar) * lbar vanishes, so only the per-pass logs remain
    value = float(((p - pbar) * (ell - lbar)).sum()) / (k * rows)
    mean_ell = ell.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(live, (p - pbar) / p, 0.0)
    grad = (ell - mean_ell + ratio) / (k * rows)
    return value, grad


def js_divergence(p: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    k, rows, _ = p.shape
    ell, live = _clamped(p, eps)
    pbar = p.mean(axis=0)
    lbar = np.log(np.maximum(pbar, eps))
    value = float((p * (ell - lbar)).sum()) / (k * rows)
    grad = (ell - lbar + live - (pbar > eps)) / (k * rows)
    return value, grad


def reverse_half(p: np.ndarray, eps: float) -> float:
    """Row-averaged (1/K) sum_i KL(pbar || p_i)."""
    k, rows, _ = p.shape
    ell, _ = _clamped(p, eps)
    pbar = p.mean(axis=0)
    lbar = np.log(np.maximum(pbar, eps))
    return float((pbar * (lbar - ell)).sum()) / (k * rows)


def pairwise_kl_sum(p: np.ndarray, eps: float) -> float:
    """Row-averaged sum_i sum_j KL(p_i || p_j), evaluated in O(K) per entry."""
    k, rows, _ = p.shape
    ell, _ = _clamped(p, eps)
    total = k * (p * ell).sum(axis=0) - p.sum(axis=0) * ell.sum(axis=0)
    return float(total.sum()) / rows
