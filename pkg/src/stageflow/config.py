"""Experiment configuration: YAML loading, strict validation and defaults."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .datasets import KINDS, DatasetSpec
from .errors import ConfigError, StageflowError
from .models import Condition
from .sampling import SOLVERS, SamplerConfig
from .schedules import parse_schedule
from .training import TrainConfig

DEFAULT_EARLY_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_LATE_GRID = (0.0, 0.1, 0.2, 0.3, 0.4)
DEFAULT_MODELS = {
    "L": {"hidden_widths": [256, 256, 256], "activation": "tanh"},
    "S": {"hidden_widths": [32, 32], "activation": "tanh"},
}


@dataclass(frozen=True)
class ModelEntry:
    """One registered model: a trainable MLP or an analytic Gaussian field."""

    kind: str = "mlp"
    hidden_widths: tuple[int, ...] = ()
    activation: str = "tanh"
    mu: tuple[float, ...] = ()
    sigma: float = 1.0

    def to_dict(self) -> dict:
        if self.kind == "mlp":
            return {"kind": "mlp", "hidden_widths": list(self.hidden_widths), "activation": self.activation}
        return {"kind": self.kind, "mu": list(self.mu), "sigma": self.sigma}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = DatasetSpec()
    model_specs: dict = field(default_factory=dict)  # id -> ModelEntry
    train: dict = field(default_factory=dict)  # id -> TrainConfig
    sampler: SamplerConfig = SamplerConfig()
    schedule_text: str = "LSL:0.4:0.2"
    early_grid: tuple[float, ...] = DEFAULT_EARLY_GRID
    late_grid: tuple[float, ...] = DEFAULT_LATE_GRID
    alpha: float = 0.1
    tau: float = 0.96
    n_seeds: int = 64
    seed: int = 0
    segments: int = 8
    workers: int = 1
    output_dir: str = "runs/default"
    per_step_flops_override: Optional[dict] = None

    def to_dict(self) -> dict:
        ds = dataclasses.asdict(self.dataset)
        sampler = {
            "total_steps": self.sampler.total_steps,
            "solver": self.sampler.solver,
            "guidance": self.sampler.guidance,
            "class_index": self.sampler.cond.class_index,
            "record_every": self.sampler.record_every,
        }
        return {
            "dataset": ds,
            "model_specs": {k: v.to_dict() for k, v in self.model_specs.items()},
            "train": {k: {f: x for f, x in dataclasses.asdict(v).items() if f != "activation"} for k, v in self.train.items()},
            "sampler": sampler,
            "schedule": self.schedule_text,
            "grids": {"early": list(self.early_grid), "late": list(self.late_grid)},
            "alpha": self.alpha,
            "tau": self.tau,
            "n_seeds": self.n_seeds,
            "seed": self.seed,
            "segments": self.segments,
            "workers": self.workers,
            "output_dir": self.output_dir,
            "per_step_flops_override": None if self.per_step_flops_override is None else dict(self.per_step_flops_override),
        }

    def dump(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
        return path

    @property
    def learned_ids(self) -> list[str]:
        return [k for k, v in self.model_specs.items() if v.kind == "mlp"]


TOP_KEYS = {"dataset", "model_specs", "train", "sampler", "schedule", "grids", "alpha", "tau", "n_seeds", "seed",
            "segments", "workers", "output_dir", "per_step_flops_override"}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def _expect_map(value: Any, key: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(key, f"expected a mapping, got {type(value).__name__}")
    return value


def _unknown(section: dict, allowed: set, prefix: str) -> None:
    for k in section:
        if k not in allowed:
            raise ConfigError(f"{prefix}{k}", "unknown key")


def _number(value: Any, key: str, integer: bool = False, low: Optional[float] = None, high: Optional[float] = None,
            low_open: bool = False) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(key, f"expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if low is not None and (value < low or (low_open and value == low)):
        raise ConfigError(key, f"value {value} out of range (must be {'>' if low_open else '>='} {low})")
    if high is not None and value > high:
        raise ConfigError(key, f"value {value} out of range (must be <= {high})")
    return value


def _grid(values: Any, key: str) -> tuple[float, ...]:
    if not isinstance(values, list) or not values:
        raise ConfigError(key, "expected a non-empty list of fractions")
    out = tuple(_number(v, f"{key}[{i}]", low=0.0, high=1.0) for i, v in enumerate(values))
    for i in range(1, len(out)):
        if out[i] <= out[i - 1]:
            raise ConfigError(f"{key}[{i}]", "grid must be strictly increasing")
    return out


def _dataset(raw: dict) -> DatasetSpec:
    _unknown(raw, {f.name for f in dataclasses.fields(DatasetSpec)}, "dataset.")
    kind = raw.get("kind", "gaussian_ring")
    if kind not in KINDS:
        raise ConfigError("dataset.kind", f"unknown dataset kind {kind!r}")
    kw: dict = {"kind": kind}
    ranges = {  # key: (integer, low, low_open)
        "num_modes": (True, 1, False),
        "radius": (False, 0.0, True),
        "mode_std": (False, 0.0, True),
        "noise_std": (False, 0.0, False),
        "cells": (True, 2, False),
    }
    for k, (is_int, low, low_open) in ranges.items():
        if k in raw:
            kw[k] = _number(raw[k], f"dataset.{k}", integer=is_int, low=low, low_open=low_open)
    try:
        return DatasetSpec(**kw).validate()
    except StageflowError as exc:
        raise ConfigError("dataset", str(exc)) from None


def _model_entry(model_id: str, raw: Any) -> ModelEntry:
    prefix = f"model_specs.{model_id}"
    raw = _expect_map(raw, prefix)
    kind = raw.get("kind", "mlp")
    if kind == "mlp":
        _unknown(raw, {"kind", "hidden_widths", "activation"}, prefix + ".")
        widths = raw.get("hidden_widths")
        if not isinstance(widths, list):
            raise ConfigError(f"{prefix}.hidden_widths", "expected a list of positive integers")
        widths = tuple(_number(w, f"{prefix}.hidden_widths[{i}]", integer=True, low=1) for i, w in enumerate(widths))
        act = raw.get("activation", "tanh")
        if act not in ("tanh", "relu"):
            raise ConfigError(f"{prefix}.activation", f"unknown activation {act!r}")
        return ModelEntry("mlp", widths, act)
    if kind == "analytic_gaussian":
        _unknown(raw, {"kind", "mu", "sigma"}, prefix + ".")
        mu = raw.get("mu")
        if not isinstance(mu, list) or not mu:
            raise ConfigError(f"{prefix}.mu", "expected a list of numbers")
        mu = tuple(_number(m, f"{prefix}.mu[{i}]") for i, m in enumerate(mu))
        sigma = _number(raw.get("sigma", 1.0), f"{prefix}.sigma", low=0.0, low_open=True)
        return ModelEntry(kind, (), "tanh", mu, sigma)
    raise ConfigError(f"{prefix}.kind", f"unknown model kind {kind!r}")


def _train_config(raw: dict, key: str, base: Optional[dict] = None) -> TrainConfig:
    kw = dict(base or {})
    for k, v in raw.items():
        if k not in TRAIN_KEYS:
            raise ConfigError(f"{key}.{k}", "unknown key")
        if k == "activation":
            raise ConfigError(f"{key}.{k}", "set the activation under model_specs")
        integer = k in ("steps", "batch_size", "seed", "eval_every")
        low, high = (1, None) if k in ("steps", "batch_size", "eval_every") else (0.0, 1.0 if k == "cond_drop_prob" else None)
        kw[k] = _number(v, f"{key}.{k}", integer=integer, low=low, high=high, low_open=(k == "lr"))
    try:
        return TrainConfig(**kw).validate()
    except StageflowError as exc:
        raise ConfigError(key, str(exc)) from None


def _sampler(raw: dict, num_classes: int) -> SamplerConfig:
    _unknown(raw, {"total_steps", "solver", "guidance", "class_index", "record_every"}, "sampler.")
    solver = raw.get("solver", "euler")
    if solver not in SOLVERS:
        raise ConfigError("sampler.solver", f"unknown solver {solver!r}")
    class_index = raw.get("class_index")
    if class_index is not None:
        class_index = _number(class_index, "sampler.class_index", integer=True, low=0, high=num_classes - 1)
    return SamplerConfig(
        total_steps=_number(raw.get("total_steps", 50), "sampler.total_steps", integer=True, low=1),
        solver=solver,
        guidance=_number(raw.get("guidance", 0.0), "sampler.guidance", low=0.0),
        cond=Condition(class_index, num_classes),
        record_every=_number(raw.get("record_every", 1), "sampler.record_every", integer=True, low=1),
    )


def _alpha(value: Any) -> float:
    alpha = _number(value, "alpha", low=0.0, low_open=True)
    if alpha >= 1.0:
        raise ConfigError("alpha", f"value {alpha} out of range (must be < 1)")
    return alpha


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed config mapping; every error names the offending key path."""
    raw = _expect_map(raw, "<root>")
    _unknown(raw, TOP_KEYS, "")
    dataset = _dataset(_expect_map(raw.get("dataset"), "dataset"))

    specs_raw = raw.get("model_specs")
    specs_raw = DEFAULT_MODELS if specs_raw is None else _expect_map(specs_raw, "model_specs")
    model_specs = {str(k): _model_entry(str(k), v) for k, v in specs_raw.items()}
    if not model_specs:
        raise ConfigError("model_specs", "at least one model is required")

    train_raw = _expect_map(raw.get("train"), "train")
    shared = {k: v for k, v in train_raw.items() if k not in model_specs}
    shared_cfg = dataclasses.asdict(_train_config(shared, "train"))
    train = {}
    for mid, entry in model_specs.items():
        if entry.kind != "mlp":
            if mid in train_raw:
                raise ConfigError(f"train.{mid}", "analytic models are not trained")
            continue
        per = _expect_map(train_raw.get(mid), f"train.{mid}")
        base = dict(shared_cfg, activation=entry.activation)
        train[mid] = _train_config(per, f"train.{mid}", base)

    sampler = _sampler(_expect_map(raw.get("sampler"), "sampler"), dataset.num_classes)

    schedule_text = raw.get("schedule", "LSL:0.4:0.2")
    if not isinstance(schedule_text, str):
        raise ConfigError("schedule", "expected schedule text")
    try:
        parse_schedule(schedule_text, model_specs.keys())
    except StageflowError as exc:
        raise ConfigError("schedule", str(exc)) from None

    grids = _expect_map(raw.get("grids"), "grids")
    _unknown(grids, {"early", "late"}, "grids.")
    early = _grid(grids["early"], "grids.early") if "early" in grids else DEFAULT_EARLY_GRID
    late = _grid(grids["late"], "grids.late") if "late" in grids else DEFAULT_LATE_GRID

    override = raw.get("per_step_flops_override")
    if override is not None:
        override = _expect_map(override, "per_step_flops_override")
        override = {str(k): _number(v, f"per_step_flops_override.{k}", low=0.0) for k, v in override.items()}

    output_dir = raw.get("output_dir", "runs/default")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "expected a path string")

    return ExperimentConfig(
        dataset=dataset,
        model_specs=model_specs,
        train=train,
        sampler=sampler,
        schedule_text=schedule_text,
        early_grid=early,
        late_grid=late,
        alpha=_alpha(raw.get("alpha", 0.1)),
        tau=_number(raw.get("tau", 0.96), "tau", low=0.0, high=1.0),
        n_seeds=_number(raw.get("n_seeds", 64), "n_seeds", integer=True, low=2),
        seed=_number(raw.get("seed", 0), "seed", integer=True, low=0),
        segments=_number(raw.get("segments", 8), "segments", integer=True, low=1),
        workers=_number(raw.get("workers", 1), "workers", integer=True, low=1),
        output_dir=output_dir,
        per_step_flops_override=override,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"malformed YAML: {exc}") from None
    return config_from_dict(raw or {})
