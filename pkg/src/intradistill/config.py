"""Experiment configuration files.

A config is a JSON object with sections ``dataset``, ``model``, ``trainer``,
``schedule`` and ``analysis``. Unknown keys anywhere are rejected so that a
typo cannot silently change one side of a paired comparison.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .data import TaskData, make_classification, make_regression
from .model import MlpConfig
from .schedule import AlphaSchedule
from .trainer import OptimizerConfig, Seeds, TrainConfig

TASK_NAMES = {"synthetic-classification": "classification", "synthetic-regression": "regression"}
MODES = ("standard", "intra", "self")

# short keys accepted by --set
ALIASES = {
    "alpha": "schedule.alpha",
    "sentinel-p": "schedule.sentinel_p",
    "sentinel-q": "schedule.sentinel_q",
    "adaptive": "schedule.adaptive",
    "total-steps": "trainer.steps",
    "steps": "trainer.steps",
    "mode": "trainer.mode",
    "k": "trainer.k_passes",
    "k-passes": "trainer.k_passes",
    "dropout": "model.dropout_rate",
    "lr": "trainer.learning_rate",
    "teacher": "trainer.teacher",
}


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSection:
    samples: int = 1200
    dims: int = 16
    classes: int = 8
    clusters_per_class: int = 2
    margin: float = 2.5
    noise: float = 0.8
    label_noise: float = 0.0
    teacher_hidden: int = 16
    target_noise: float = 0.1
    valid_fraction: float = 0.25
    seed: int = 0


@dataclass
class ModelSection:
    hidden_dims: list = field(default_factory=lambda: [64])
    dropout_rate: float = 0.2


@dataclass
class SeedSection:
    init: int = 0
    data: int = 0
    dropout: int = 0


@dataclass
class TrainerSection:
    mode: str = "standard"
    k_passes: int = 2
    optimizer: str = "adam"
    learning_rate: float = 3e-3
    steps: int = 1500
    batch_size: int = 32
    weight_decay: float = 0.0
    seeds: SeedSection = field(default_factory=SeedSection)
    checkpoint_every: int = 75
    intra_loss: str = "auto"
    shared_masks: bool = False
    kd_task_weight: float = 1.0
    teacher: str | None = None
    track_sensitivity: bool = False
    record_wall_clock: bool = True


@dataclass
class ScheduleSection:
    alpha: float = 5.0
    sentinel_p: float = 5.0
    sentinel_q: float = 10.0
    adaptive: bool = True


@dataclass
class AnalysisSection:
    enabled: bool = True
    eval_batches: int = 100
    eval_batch_size: int = 32
    pool: str = "valid"
    pool_seed: int = 1234
    trim: float = 0.01
    sample: float = 0.1
    bins: int = 50
    ratios: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(10)])


@dataclass
class ExperimentConfig:
    experiment_name: str = "experiment"
    task: str = "synthetic-classification"
    output_dir: str = "runs/experiment"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def __post_init__(self) -> None:
        if self.task not in TASK_NAMES:
            raise ConfigError(f"task must be one of {sorted(TASK_NAMES)}, got {self.task!r}")
        if self.trainer.mode not in MODES:
            raise ConfigError(f"trainer.mode must be one of {MODES}, got {self.trainer.mode!r}")
        if self.analysis.pool not in ("train", "valid"):
            raise ConfigError("analysis.pool must be 'train' or 'valid'")

    @property
    def model_task(self) -> str:
        return TASK_NAMES[self.task]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def make_data(self) -> TaskData:
        d = self.dataset
        if self.model_task == "classification":
            return make_classification(
                d.samples, d.dims, d.classes, d.margin, d.noise, d.clusters_per_class,
                d.label_noise, d.valid_fraction, d.seed,
            )
        return make_regression(d.samples, d.dims, d.teacher_hidden, d.target_noise, d.valid_fraction, d.seed)

    def mlp_config(self) -> MlpConfig:
        out = self.dataset.classes if self.model_task == "classification" else 1
        return MlpConfig(self.dataset.dims, tuple(self.model.hidden_dims), out, self.model_task, self.model.dropout_rate)

    def schedule_obj(self) -> AlphaSchedule:
        s = self.schedule
        return AlphaSchedule(s.alpha, s.sentinel_p, s.sentinel_q, self.trainer.steps, s.adaptive)

    def train_config(self) -> TrainConfig:
        t = self.trainer
        return TrainConfig(
            model=self.mlp_config(),
            optimizer=OptimizerConfig(t.optimizer, t.learning_rate, t.steps, t.batch_size, t.weight_decay),
            schedule=self.schedule_obj(),
            k_passes=t.k_passes if t.mode == "intra" else 1,
            seeds=Seeds(t.seeds.init, t.seeds.data, t.seeds.dropout),
            checkpoint_every=t.checkpoint_every,
            intra_loss=t.intra_loss,
            shared_masks=t.shared_masks,
            kd_task_weight=t.kd_task_weight,
            track_sensitivity=t.track_sensitivity,
            eval_batches=self.analysis.eval_batches,
            eval_batch_size=self.analysis.eval_batch_size,
        )


_NESTED = {
    ExperimentConfig: {
        "dataset": DatasetSection,
        "model": ModelSection,
        "trainer": TrainerSection,
        "schedule": ScheduleSection,
        "analysis": AnalysisSection,
    },
    TrainerSection: {"seeds": SeedSection},
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(cls, {}).get(key)
        kwargs[key] = _build(sub, value, f"{where}{key}.") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def bundled_config_names() -> list[str]:
    root = resources.files("intradistill") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path_or_name) -> ExperimentConfig:
    """Load a config file, or a bundled config by name (``toy_classification``)."""
    path = Path(path_or_name)
    if path.exists():
        text = path.read_text()
    else:
        name = str(path_or_name).removeprefix("bundled:").removesuffix(".json")
        res = resources.files("intradistill") / "configs" / f"{name}.json"
        if not res.is_file():
            raise FileNotFoundError(f"config not found: {path_or_name}")
        text = res.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path_or_name}: invalid JSON ({exc})") from None
    return from_dict(raw)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``key=value`` overrides; values are parsed as JSON when possible."""
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        path = ALIASES.get(key, key).replace("-", "_").split(".")
        node = data
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if path[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[path[-1]] = _parse_value(raw)
    return from_dict(data)


def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    data = config.to_dict()
    data["trainer"]["seeds"] = {"init": seed, "data": seed, "dropout": seed}
    return from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
