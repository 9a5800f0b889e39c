"""One-shot sensitivity-ordered pruning sweeps and run comparisons."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .model import ParameterSubset, ParameterVector, zero_out
from .sensitivity import SensitivityReport, read_report
from .trainer import evaluate, read_metrics

# ratios above this are an extra stress range, flagged in sweep output
STRESS_RATIO = 0.5


def prune_order(report: SensitivityReport) -> np.ndarray:
    """Flat indices by ascending score, ties broken by lower index."""
    return np.lexsort((np.arange(report.scores.size), report.scores))


def prune_lowest(params: ParameterVector, report: SensitivityReport, ratio: float) -> ParameterVector:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"prune ratio must be in [0, 1], got {ratio}")
    if report.scores.size != params.total_count:
        raise ValueError(
            f"report has {report.scores.size} scores but the model has {params.total_count} parameters"
        )
    k = int(math.floor(ratio * params.total_count))
    return zero_out(params, ParameterSubset(prune_order(report)[:k]))


@dataclass(frozen=True)
class PruneSweepResult:
    ratios: tuple[float, ...]
    metric: tuple[float, ...]
    loss: tuple[float, ...]
    metric_name: str
    model_tag: str = ""
    stress_range: bool = False  # any ratio above STRESS_RATIO
    drop: tuple[float, ...] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "drop", tuple(self.metric[0] - m for m in self.metric))

    def drop_at(self, ratio: float) -> float:
        for r, d in zip(self.ratios, self.drop):
            if math.isclose(r, ratio, abs_tol=1e-12):
                return d
        raise KeyError(f"ratio {ratio} not in sweep")


def check_ratios(ratios: Sequence[float]) -> tuple[float, ...]:
    rs = tuple(float(r) for r in ratios)
    if not rs or rs[0] != 0.0:
        raise ValueError("sweep ratios must start at 0")
    if any(b <= a for a, b in zip(rs, rs[1:])):
        raise ValueError(f"sweep ratios must be strictly increasing, got {list(rs)}")
    if rs[-1] > 1.0:
        raise ValueError("sweep ratios must not exceed 1")
    return rs


def prune_sweep(
    params: ParameterVector,
    report: SensitivityReport,
    dataset: Dataset,
    ratios: Sequence[float],
    model_tag: str = "",
) -> PruneSweepResult:
    """Evaluate one-shot prunes of the original parameters at each ratio."""
    rs = check_ratios(ratios)
    name = "accuracy" if params.config.task == "classification" else "mse"
    metric, loss = [], []
    for r in rs:
        ev = evaluate(prune_lowest(params, report, r) if r > 0 else params, dataset)
        metric.append(ev[name])
        loss.append(ev["loss"])
    return PruneSweepResult(rs, tuple(metric), tuple(loss), name, model_tag, rs[-1] > STRESS_RATIO)


def write_sweep(path, sweep: PruneSweepResult) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# model_tag={sweep.model_tag} metric={sweep.metric_name} stress_range={str(sweep.stress_range).lower()}",
        f"ratio,{sweep.metric_name},{sweep.metric_name}_drop,loss",
    ]
    for r, m, d, l in zip(sweep.ratios, sweep.metric, sweep.drop, sweep.loss):
        lines.append(f"{r:.17g},{m:.17g},{d:.17g},{l:.17g}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_sweep(path) -> PruneSweepResult:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sweep file not found: {path}")
    lines = path.read_text().splitlines()
    meta = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
    rows = [list(map(float, ln.split(","))) for ln in lines[2:] if ln]
    return PruneSweepResult(
        tuple(r[0] for r in rows),
        tuple(r[1] for r in rows),
        tuple(r[3] for r in rows),
        meta["metric"],
        meta.get("model_tag", ""),
        meta.get("stress_range") == "true",
    )


# ---------------------------------------------------------------------------
# run comparison


@dataclass(frozen=True)
class RunSummary:
    name: str
    task: str
    seed: int
    final_metric: float
    best_valid_loss: float
    balance_std: float
    drop_at_half: float


def load_run(run_dir) -> RunSummary:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("status") != "complete":
        raise ValueError(f"run is not complete: {run_dir}")
    arts = manifest["artifacts"]
    for key in ("checkpoint_metrics", "report", "sweep"):
        if key not in arts:
            raise ValueError(f"run {run_dir} has no {key} artifact")
        if not (run_dir / arts[key]).exists():
            raise FileNotFoundError(f"missing artifact: {run_dir / arts[key]}")
    ckpts = read_metrics(run_dir / arts["checkpoint_metrics"])
    metric_key = next(k for k in ckpts[0] if k.startswith("valid_") and k != "valid_loss")
    report = read_report(run_dir / arts["report"])
    sweep = read_sweep(run_dir / arts["sweep"])
    cfg = manifest["config"]
    return RunSummary(
        name=run_dir.name,
        task=cfg["task"],
        seed=int(cfg["trainer"]["seeds"]["init"]),
        final_metric=ckpts[-1][metric_key],
        best_valid_loss=min(c["valid_loss"] for c in ckpts),
        balance_std=float(report.scores.std()),
        drop_at_half=sweep.drop_at(0.5) if 0.5 in sweep.ratios else math.nan,
    )


@dataclass(frozen=True)
class Comparison:
    reference: RunSummary
    others: tuple[RunSummary, ...]

    def deltas(self) -> list[dict[str, float]]:
        ref = self.reference
        out = []
        for r in self.others:
            out.append(
                {
                    "final_metric": r.final_metric - ref.final_metric,
                    "balance_std": r.balance_std - ref.balance_std,
                    "std_ratio": r.balance_std / ref.balance_std if ref.balance_std > 0 else math.nan,
                    "drop_at_half": r.drop_at_half - ref.drop_at_half,
                }
            )
        return out


def compare_runs(run_dirs: Sequence) -> Comparison:
    """Compare runs against the first one; all must share a task."""
    if len(run_dirs) < 2:
        raise ValueError("need at least two runs to compare")
    runs = [load_run(d) for d in run_dirs]
    tasks = {r.task for r in runs}
    if len(tasks) != 1:
        raise ValueError(f"runs use different tasks: {sorted(tasks)}")
    return Comparison(runs[0], tuple(runs[1:]))


def format_comparison(cmp: Comparison) -> str:
    cols = ("run", "seed", "final_metric", "best_valid_loss", "balance_std", "drop_at_0.5")
    lines = ["# comparison against " + cmp.reference.name, ",".join(cols)]
    for r in (cmp.reference, *cmp.others):
        lines.append(
            f"{r.name},{r.seed},{r.final_metric:.17g},{r.best_valid_loss:.17g},{r.balance_std:.17g},{r.drop_at_half:.17g}"
        )
    lines.append("")
    lines.append("run,delta_final_metric,delta_balance_std,std_ratio,delta_drop_at_0.5")
    for r, d in zip(cmp.others, cmp.deltas()):
        lines.append(
            f"{r.name},{d['final_metric']:.17g},{d['balance_std']:.17g},{d['std_ratio']:.17g},{d['drop_at_half']:.17g}"
        )
    ratios = [d["std_ratio"] for d in cmp.deltas()]
    lines.append(f"median_std_ratio,{float(np.median(ratios)):.17g}")
    return "\n".join(lines) + "\n"
