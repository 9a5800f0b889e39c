"""Parameter sensitivity: the exact zero-out loss change and its first-order
estimate, plus per-parameter score reports and their balance summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Graph
from .model import ParameterSubset, ParameterVector, bind, forward, zero_out
from .objective import mean_of, task_loss, task_loss_node

PERCENTILES = (1, 5, 25, 50, 75, 95, 99)

Batch = tuple[np.ndarray, np.ndarray]


def mean_loss(params: ParameterVector, batches: Sequence[Batch]) -> float:
    """Mean over batches of the evaluation-mode task loss."""
    if not batches:
        raise ValueError("need at least one batch")
    task = params.config.task
    losses = [task_loss(forward(params, x).value, y, task) for x, y in batches]
    return float(np.mean(losses))


def loss_and_gradient(params: ParameterVector, batches: Sequence[Batch]) -> tuple[float, np.ndarray]:
    """Evaluation-mode mean batch loss and its flat gradient."""
    if not batches:
        raise ValueError("need at least one batch")
    g = Graph()
    leaves = bind(params, g)
    task = params.config.task
    losses = [task_loss_node(g, forward(params, x, graph=g, leaves=leaves), y, task) for x, y in batches]
    root = mean_of(g, losses)
    grads = g.backward(root, wrt=leaves)
    return root.item(), np.concatenate([grads[t].reshape(-1) for t in leaves])


def exact_sensitivity(params: ParameterVector, subset: ParameterSubset, batches: Sequence[Batch]) -> float:
    """|L(params) - L(params with the subset zeroed)|."""
    if len(subset) == 0:
        raise ValueError("subset must be nonempty")
    return abs(mean_loss(params, batches) - mean_loss(zero_out(params, subset), batches))


def approx_sensitivity(params: ParameterVector, gradients, subset: ParameterSubset) -> float:
    """First-order estimate |theta_s . grad_s|."""
    flat = params.flat()
    g = np.asarray(gradients, dtype=np.float64).reshape(-1)
    if g.shape != flat.shape:
        raise ValueError(f"gradient length {g.size} does not match parameter count {flat.size}")
    subset.validate(flat.size)
    idx = subset.indices
    return float(abs(np.dot(flat[idx], g[idx])))


@dataclass(frozen=True)
class Summary:
    count: int
    mean: float
    std: float
    percentiles: dict[int, float]
    top_share: float  # fraction of total score held by the top 20%


def summarize(scores: np.ndarray, top_fraction: float = 0.2) -> Summary:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot summarize an empty score set")
    pct = np.percentile(s, PERCENTILES)
    total = s.sum()
    k = _top_count(s.size, top_fraction)
    top = np.sort(s)[::-1][:k].sum()
    return Summary(
        count=int(s.size),
        mean=float(s.mean()),
        std=float(s.std()),
        percentiles={p: float(v) for p, v in zip(PERCENTILES, pct)},
        top_share=float(top / total) if total > 0 else 0.0,
    )


def _top_count(n: int, fraction: float) -> int:
    return min(n, max(1, int(round(fraction * n))))


@dataclass(frozen=True)
class SensitivityReport:
    scores: np.ndarray
    batch_count: int
    trim_fraction: float = 0.0
    sample_fraction: float = 1.0
    visualization: bool = False
    summary_scores: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    summary: Summary = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64)
        if np.any(s < 0):
            raise ValueError("sensitivity scores must be nonnegative")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        if self.summary_scores is None:
            object.__setattr__(self, "summary_scores", s)
        if self.summary is None:
            object.__setattr__(self, "summary", summarize(self.summary_scores))


def trim_and_sample(scores: np.ndarray, trim: float, sample: float, seed: int) -> np.ndarray:
    """Drop the top ``trim`` fraction, then keep a random ``sample`` fraction."""
    if not 0.0 <= trim < 1.0 or not 0.0 < sample <= 1.0:
        raise ValueError(f"need 0 <= trim < 1 and 0 < sample <= 1, got {trim}, {sample}")
    s = np.sort(np.asarray(scores, dtype=np.float64))
    s = s[: s.size - int(math.floor(trim * s.size))]
    if sample < 1.0:
        k = max(1, int(round(sample * s.size)))
        rng = np.random.default_rng(seed)
        s = np.sort(rng.choice(s, k, replace=False))
    return s


def per_parameter_scores(
    params: ParameterVector,
    batches: Sequence[Batch],
    visualization: bool = False,
    trim: float = 0.01,
    sample: float = 0.1,
    seed: int = 0,
) -> SensitivityReport:
    """score_i = |theta_i * g_i| with g the gradient of the mean batch loss.

    When ``visualization`` is set the summary describes the trimmed and
    subsampled multiset instead of all scores.
    """
    _, grad = loss_and_gradient(params, batches)
    scores = np.abs(params.flat() * grad)
    if not visualization:
        return SensitivityReport(scores, len(batches))
    shown = trim_and_sample(scores, trim, sample, seed)
    return SensitivityReport(scores, len(batches), trim, sample, True, shown)


def balance_std(report: SensitivityReport) -> float:
    """Population standard deviation of the summarized scores."""
    return report.summary.std


def top_bottom_track(history: Sequence[SensitivityReport], fraction: float = 0.2) -> list[tuple[float, float]]:
    """Per report: mean of the current top ``fraction`` and of the rest.

    The rest is NaN when the top share covers every parameter.
    """
    if not history:
        raise ValueError("empty report history")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    out = []
    for rep in history:
        s = np.sort(rep.scores)[::-1]
        k = _top_count(s.size, fraction)
        rest = s[k:]
        out.append((float(s[:k].mean()), float(rest.mean()) if rest.size else math.nan))
    return out


# ---------------------------------------------------------------------------
# export


def _num(x: float) -> str:
    return f"{x:.17g}"


def write_report(path, report: SensitivityReport, params: ParameterVector) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = params.layer_names()
    if len(names) != report.scores.size:
        raise ValueError("report and parameters are not aligned")
    lines = ["flat_index\tlayer\tscore"]
    lines += [f"{i}\t{n}\t{_num(s)}" for i, (n, s) in enumerate(zip(names, report.scores))]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_report(path) -> SensitivityReport:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"report not found: {path}")
    rows = path.read_text().splitlines()[1:]
    scores = np.array([float(r.split("\t")[2]) for r in rows if r])
    return SensitivityReport(scores, batch_count=0)


def format_summary(summary: Summary, title: str = "summary") -> str:
    lines = [f"[{title}]", f"count = {summary.count}", f"mean = {_num(summary.mean)}", f"std = {_num(summary.std)}"]
    lines += [f"p{p} = {_num(v)}" for p, v in summary.percentiles.items()]
    lines.append(f"top20_share = {_num(summary.top_share)}")
    return "\n".join(lines) + "\n"


def histogram(scores: np.ndarray, bins: int = 50) -> list[tuple[float, float, int]]:
    counts, edges = np.histogram(np.asarray(scores, dtype=np.float64), bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]


def write_histogram(path, rows: list[tuple[float, float, int]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = ["bin_left,bin_right,count"] + [f"{_num(a)},{_num(b)},{c}" for a, b, c in rows]
    path.write_text("\n".join(body) + "\n")
    return path
