"""Experiment configuration: YAML in, validated + defaulted config out.

Validation reports every problem at once (not first-failure) and rejects
unknown keys.  The resolved configuration is dumped as JSON next to the
results so a run is always reproducible from its artifacts.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import yaml

from .errors import ConfigValidationError
from .nn import atomic_write_json

STRATEGIES = ("spp", "ewc", "si", "mas", "sgd", "sgd_f", "finetune", "joint")
CONSOLIDATING = ("spp", "ewc", "si", "mas")

DEFAULT_LAMBDAS = {"spp": 4.0, "ewc": 400.0, "si": 1.0, "mas": 1.0}
SWEEP_GRID = (0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


@dataclass
class Seeds:
    init: int = 7
    data: int = 11
    dropout: int = 13


@dataclass
class TasksConfig:
    kind: str = "split"  # "split" | "permuted"
    source: str = "synthetic"  # "synthetic" | "mnist"
    data_dir: str | None = None  # IDX directory when source is mnist
    class_subsets: list[list[int]] | None = None  # split sequences
    task_count: int = 10  # permuted sequences
    permutation_seed: int = 99
    first_task_identity: bool = True
    train_size: int = 10_000
    test_size: int = 2_000
    synthetic_train_pool: int = 60_000
    synthetic_test_pool: int = 10_000
    synthetic_noise: float = 0.3
    synthetic_seed: int = 1234


@dataclass
class ModelConfig:
    arch: list[int] = field(default_factory=lambda: [784, 512, 256, 10])
    head_mode: str = "single"
    dropout_rate: float = 0.5


@dataclass
class TrainingConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.1
    lr_decay_ratio: float = 0.96
    lr_decay_every: int | None = None  # None: one decay step per epoch


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    output_dir: str = "runs/experiment"
    seeds: Seeds = field(default_factory=Seeds)
    tasks: TasksConfig = field(default_factory=TasksConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    strategies: list[str] = field(default_factory=lambda: ["spp", "sgd"])
    lambdas: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LAMBDAS))
    si_xi: float = 0.1
    importance_sample_size: int = 2048
    importance_sum_window: int = 192
    ewc_use_true_labels: bool = False
    reference: str = "joint"  # "joint" | "single-task"
    reference_file: str | None = None

    def resolved(self) -> dict:
        doc = asdict(self)
        doc["strategy_head_modes"] = {
            s: resolve_head_mode(s, self.model.head_mode) for s in self.strategies
        }
        return doc

    def config_hash(self) -> str:
        canon = json.dumps(self.resolved(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def resolve_head_mode(strategy: str, configured: str) -> str:
    """sgd is the single-head baseline; finetune/sgd_f are multi-head by
    definition; everything else follows the config."""
    if strategy == "sgd":
        return "single"
    if strategy in ("finetune", "sgd_f"):
        return "multi"
    return configured


_SCHEMA = {
    "name": str,
    "output_dir": str,
    "seeds": {"init": int, "data": int, "dropout": int},
    "tasks": {
        "kind": str,
        "source": str,
        "data_dir": str,
        "class_subsets": list,
        "task_count": int,
        "permutation_seed": int,
        "first_task_identity": bool,
        "train_size": int,
        "test_size": int,
        "synthetic_train_pool": int,
        "synthetic_test_pool": int,
        "synthetic_noise": float,
        "synthetic_seed": int,
    },
    "model": {"arch": list, "head_mode": str, "dropout_rate": float},
    "training": {
        "epochs": int,
        "batch_size": int,
        "lr": float,
        "lr_decay_ratio": float,
        "lr_decay_every": int,
    },
    "strategies": list,
    "lambdas": dict,
    "si_xi": float,
    "importance_sample_size": int,
    "importance_sum_window": int,
    "ewc_use_true_labels": bool,
    "reference": str,
    "reference_file": str,
    # derived, present in resolved dumps so they re-validate to a fixed point
    "strategy_head_modes": dict,
}


def _check_unknown_keys(data: dict, schema: dict, prefix: str, errors: list[str]) -> None:
    for key, value in data.items():
        if key not in schema:
            errors.append(f"unknown key: {prefix}{key}")
        elif isinstance(schema[key], dict) and schema[key] and isinstance(value, dict):
            if key != "lambdas":
                _check_unknown_keys(value, schema[key], f"{prefix}{key}.", errors)


def _merge_section(obj, data: dict, errors: list[str], prefix: str) -> None:
    for key, value in data.items():
        if hasattr(obj, key):
            setattr(obj, key, value)


def validate_config_data(data: dict) -> ExperimentConfig:
    """Build a resolved config from a parsed mapping, or raise with every error."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigValidationError(["config root must be a mapping"])
    _check_unknown_keys(data, {**_SCHEMA, "lambdas": dict}, "", errors)

    cfg = ExperimentConfig()
    for section, cls in (("seeds", Seeds), ("tasks", TasksConfig), ("model", ModelConfig), ("training", TrainingConfig)):
        raw = data.get(section, {})
        if raw and not isinstance(raw, dict):
            errors.append(f"{section} must be a mapping")
            continue
        _merge_section(getattr(cfg, section), raw or {}, errors, section + ".")
    for key in ("name", "output_dir", "strategies", "si_xi", "importance_sample_size",
                "importance_sum_window", "ewc_use_true_labels", "reference", "reference_file"):
        if key in data:
            setattr(cfg, key, data[key])
    if "lambdas" in data:
        if not isinstance(data["lambdas"], dict):
            errors.append("lambdas must be a mapping of strategy -> value")
        else:
            cfg.lambdas = {**DEFAULT_LAMBDAS, **{k: float(v) for k, v in data["lambdas"].items()}}

    # semantic checks, all collected before raising
    if not cfg.strategies:
        errors.append("strategies must be nonempty")
    for s in cfg.strategies:
        if s not in STRATEGIES:
            errors.append(f"unknown strategy: {s} (choose from {', '.join(STRATEGIES)})")
    for s, lam in cfg.lambdas.items():
        if s not in CONSOLIDATING:
            errors.append(f"lambda given for non-consolidating strategy: {s}")
        elif not lam >= 0:
            errors.append(f"lambda for {s} must be >= 0, got {lam}")
    if cfg.tasks.kind not in ("split", "permuted"):
        errors.append(f"tasks.kind must be split or permuted, got {cfg.tasks.kind}")
    if cfg.tasks.source not in ("synthetic", "mnist"):
        errors.append(f"tasks.source must be synthetic or mnist, got {cfg.tasks.source}")
    if cfg.tasks.source == "mnist":
        if not cfg.tasks.data_dir:
            errors.append("tasks.data_dir is required when tasks.source is mnist")
        elif not os.path.isdir(cfg.tasks.data_dir):
            errors.append(f"tasks.data_dir does not exist: {cfg.tasks.data_dir}")
    if cfg.tasks.kind == "split":
        if cfg.tasks.class_subsets is None:
            cfg.tasks.class_subsets = [[2 * i, 2 * i + 1] for i in range(5)]
        flat = [c for s in cfg.tasks.class_subsets for c in s]
        if len(set(flat)) != len(flat):
            errors.append(f"tasks.class_subsets overlap: {cfg.tasks.class_subsets}")
    else:
        if cfg.tasks.task_count < 1:
            errors.append(f"tasks.task_count must be >= 1, got {cfg.tasks.task_count}")
    if cfg.tasks.train_size < 1 or cfg.tasks.test_size < 1:
        errors.append("tasks.train_size and tasks.test_size must be >= 1")
    if cfg.model.head_mode not in ("single", "multi"):
        errors.append(f"model.head_mode must be single or multi, got {cfg.model.head_mode}")
    if len(cfg.model.arch) < 2 or any(int(s) <= 0 for s in cfg.model.arch):
        errors.append(f"model.arch must list positive layer sizes, got {cfg.model.arch}")
    if not 0.0 <= cfg.model.dropout_rate < 1.0:
        errors.append(f"model.dropout_rate must be in [0, 1), got {cfg.model.dropout_rate}")
    if cfg.training.epochs < 1:
        errors.append(f"training.epochs must be >= 1, got {cfg.training.epochs}")
    if cfg.training.batch_size < 1:
        errors.append(f"training.batch_size must be >= 1, got {cfg.training.batch_size}")
    if not cfg.training.lr > 0:
        errors.append(f"training.lr must be positive, got {cfg.training.lr}")
    if not 0.0 < cfg.training.lr_decay_ratio <= 1.0:
        errors.append(f"training.lr_decay_ratio must be in (0, 1], got {cfg.training.lr_decay_ratio}")
    if cfg.training.lr_decay_every is not None and cfg.training.lr_decay_every < 1:
        errors.append("training.lr_decay_every must be >= 1 when given")
    if not cfg.si_xi > 0:
        errors.append(f"si_xi must be positive, got {cfg.si_xi}")
    if cfg.importance_sample_size < 1:
        errors.append(f"importance_sample_size must be >= 1, got {cfg.importance_sample_size}")
    if cfg.importance_sum_window < 1:
        errors.append(f"importance_sum_window must be >= 1, got {cfg.importance_sum_window}")
    if cfg.reference not in ("joint", "single-task"):
        errors.append(f"reference must be joint or single-task, got {cfg.reference}")
    if cfg.reference_file is not None and not os.path.exists(cfg.reference_file):
        errors.append(f"reference_file does not exist: {cfg.reference_file}")

    if errors:
        raise ConfigValidationError(errors)

    # materialize derived defaults
    if cfg.reference == "joint" and cfg.reference_file is None and "joint" not in cfg.strategies:
        cfg.strategies = list(cfg.strategies) + ["joint"]
    return cfg


def validate_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file (YAML; JSON parses as YAML)."""
    if not os.path.exists(path):
        raise ConfigValidationError([f"config file not found: {path}"])
    with open(path) as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigValidationError([f"cannot parse {path}: {e}"]) from e
    return validate_config_data(data)


def dump_resolved(cfg: ExperimentConfig, path: str) -> None:
    atomic_write_json(cfg.resolved(), path)
