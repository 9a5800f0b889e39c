"""Command line: ``intradistill {train,sensitivity,sweep,schedule,compare}``."""
from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .analysis import compare_runs, format_comparison, prune_sweep, write_sweep
from .config import ExperimentConfig, apply_overrides, dump_config, load_config, with_seed
from .data import Dataset
from .model import ParameterVector, load_checkpoint, save_checkpoint
from .schedule import AlphaSchedule, sample_curve
from .sensitivity import (
    format_summary,
    histogram,
    per_parameter_scores,
    read_report,
    summarize,
    top_bottom_track,
    trim_and_sample,
    write_histogram,
    write_report,
)
from .trainer import (
    train_intra_distill,
    train_self_distill,
    train_standard,
    write_checkpoint_metrics,
    write_metrics,
)


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = with_seed(cfg, args.seed)
    return apply_overrides(cfg, getattr(args, "set", None) or [])


def _pool(cfg: ExperimentConfig, split: Dataset, batches: int | None = None, seed: int | None = None):
    a = cfg.analysis
    return split.sample_batches(batches or a.eval_batches, a.eval_batch_size, a.pool_seed if seed is None else seed)


def _check_alignment(params: ParameterVector, cfg: ExperimentConfig) -> None:
    want = cfg.mlp_config()
    have = params.config
    if (have.input_dim, have.output_dim, have.task) != (want.input_dim, want.output_dim, want.task):
        raise ValueError(
            f"checkpoint model (in={have.input_dim}, out={have.output_dim}, {have.task}) does not match "
            f"dataset config (in={want.input_dim}, out={want.output_dim}, {want.task})"
        )


def _write_sensitivity(out: Path, params: ParameterVector, cfg: ExperimentConfig, split: Dataset,
                       batches: int, trim: float, sample: float, seed: int, bins: int) -> dict[str, str]:
    report = per_parameter_scores(params, _pool(cfg, split, batches, seed))
    shown = trim_and_sample(report.scores, trim, sample, seed)
    write_report(out / "sensitivity.tsv", report, params)
    (out / "sensitivity_summary.txt").write_text(
        f"batch_count = {report.batch_count}\npool = {cfg.analysis.pool}\n\n"
        + format_summary(report.summary, "all parameters")
        + f"\n[visualization]\ntrim = {trim}\nsample = {sample}\n"
        + format_summary(summarize(shown), "trimmed and sampled")
    )
    write_histogram(out / "histogram.csv", histogram(shown, bins))
    return {"report": "sensitivity.tsv", "report_summary": "sensitivity_summary.txt", "histogram": "histogram.csv"}


def _split_for(cfg: ExperimentConfig, data) -> Dataset:
    return data.valid if cfg.analysis.pool == "valid" else data.train


def cmd_train(args) -> int:
    started = time.time()
    cfg = _resolve_config(args)
    if args.mode:
        cfg = apply_overrides(cfg, [f"trainer.mode={args.mode}"])
    if args.teacher:
        cfg = apply_overrides(cfg, [f"trainer.teacher={json.dumps(args.teacher)}"])
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = cfg.make_data()
    tc = cfg.train_config()
    mode = cfg.trainer.mode
    if mode == "standard":
        result = train_standard(tc, data)
    elif mode == "intra":
        result = train_intra_distill(tc, data)
    else:
        if not cfg.trainer.teacher:
            raise ValueError("self-distillation needs a teacher checkpoint (--teacher)")
        result = train_self_distill(tc, data, load_checkpoint(cfg.trainer.teacher))

    (out / "config.json").write_text(dump_config(cfg))
    arts = {"config": "config.json"}
    save_checkpoint(out / "checkpoint.bin", result.params, {"selected": "best_valid_loss"})
    save_checkpoint(out / "final.bin", result.final_params, {"selected": "final"})
    arts.update(checkpoint="checkpoint.bin", final_checkpoint="final.bin")
    write_metrics(out / "metrics.csv", result.metrics, cfg.trainer.record_wall_clock)
    write_checkpoint_metrics(out / "checkpoints.csv", result.metrics)
    arts.update(metrics="metrics.csv", checkpoint_metrics="checkpoints.csv")
    if result.history:
        track = top_bottom_track([r for _, r in result.history])
        rows = ["step,top20_mean,rest80_mean"] + [
            f"{s},{t:.17g},{b:.17g}" for (s, _), (t, b) in zip(result.history, track)
        ]
        (out / "sensitivity_track.csv").write_text("\n".join(rows) + "\n")
        arts["sensitivity_track"] = "sensitivity_track.csv"
    if cfg.analysis.enabled:
        a = cfg.analysis
        split = _split_for(cfg, data)
        arts.update(_write_sensitivity(out, result.params, cfg, split, a.eval_batches, a.trim, a.sample, a.pool_seed, a.bins))
        sweep = prune_sweep(result.params, read_report(out / "sensitivity.tsv"), data.valid, a.ratios, cfg.experiment_name)
        write_sweep(out / "sweep.csv", sweep)
        arts["sweep"] = "sweep.csv"
    best = result.metrics.best_checkpoint
    manifest = {
        "config": cfg.to_dict(),
        "artifacts": arts,
        "best": {"step": best.step, "valid_loss": best.valid_loss, "valid_metric": best.valid_metric},
        "versions": {
            "intradistill": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "kernels": kernels.BACKEND,
        },
        "wall_clock_s": round(time.time() - started, 3),
        "status": "complete",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(out / "manifest.json")
    return 0


def cmd_sensitivity(args) -> int:
    cfg = _resolve_config(args)
    params = load_checkpoint(args.checkpoint)
    _check_alignment(params, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    a = cfg.analysis
    seed = a.pool_seed if args.seed is None else args.seed
    split = _split_for(cfg, cfg.make_data())
    _write_sensitivity(
        out, params, cfg, split,
        args.batches or a.eval_batches,
        a.trim if args.trim is None else args.trim,
        a.sample if args.sample is None else args.sample,
        seed,
        args.bins or a.bins,
    )
    print(out / "sensitivity.tsv")
    return 0


def _parse_ratios(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValueError(f"could not parse ratios {text!r}") from None


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    params = load_checkpoint(args.checkpoint)
    _check_alignment(params, cfg)
    report = read_report(args.report)
    if report.scores.size != params.total_count:
        raise ValueError(f"report has {report.scores.size} scores but checkpoint has {params.total_count} parameters")
    ratios = _parse_ratios(args.ratios) if args.ratios else cfg.analysis.ratios
    sweep = prune_sweep(params, report, cfg.make_data().valid, ratios, cfg.experiment_name)
    path = write_sweep(args.out, sweep)
    print(path)
    return 0


def cmd_schedule(args) -> int:
    s = AlphaSchedule(args.alpha, args.p, args.q, args.n, adaptive=not args.constant)
    lines = ["x,alpha_prime"] + [f"{x},{v:.17g}" for x, v in sample_curve(s, args.samples)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    text = format_comparison(compare_runs(args.runs))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intradistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="config file or bundled name")
        p.add_argument("--out", help="output location")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("train", help="train one model and write a run directory")
    common(p)
    p.add_argument("--mode", choices=("standard", "intra", "self"))
    p.add_argument("--teacher", help="teacher checkpoint for --mode self")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sensitivity", help="per-parameter sensitivity report for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batches", type=int)
    p.add_argument("--trim", type=float)
    p.add_argument("--sample", type=float)
    p.add_argument("--bins", type=int)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("sweep", help="sensitivity-ordered pruning sweep")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--ratios", help="comma-separated increasing ratios starting at 0")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("schedule", help="sample the adaptive alpha' curve")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--p", type=float, default=5.0)
    p.add_argument("--q", type=float, default=10.0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--samples", type=int, default=11)
    p.add_argument("--constant", action="store_true", help="disable the ramp")
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("compare", help="compare completed run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "sweep" and not args.out:
        args.out = "sweep.csv"
    if args.command == "sensitivity" and not args.out:
        args.out = "."
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError, FloatingPointError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"intradistill {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
