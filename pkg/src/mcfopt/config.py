"""JSON run configuration (``schema_version`` 1).

Every key except ``schema_version`` is optional; omitted keys take the
defaults of :class:`~mcfopt.trainer.RunConfig`. Unknown keys are errors::

    {
      "schema_version": 1,
      "task": {"kind": "linear-regression", "input_dim": 16, "hidden_dim": 16,
               "n_samples": 512, "noise_std": 0.01, "seed": 0,
               "weight_scale": 1.0, "weight_offset": 0.0},
      "strategy": "C",
      "work_format": "bf16",
      "high_format": "fp32",
      "optimizer": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-08,
                    "weight_decay": 0.0, "eps_inside_sqrt": true, "clip_norm": null,
                    "schedule": {"kind": "constant", "warmup_steps": 0,
                                 "total_steps": null, "min_ratio": 0.0}},
      "steps": 500,
      "batch_size": 32,
      "seed": 0,
      "grad_scale": 1.0,
      "record_every": 1
    }
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .optim import HyperParams, Schedule, Strategy
from .trainer import RunConfig, Task

__all__ = ["SCHEMA_VERSION", "ConfigError", "load_config", "parse_config", "config_to_dict"]

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version", "task", "strategy", "work_format", "high_format", "optimizer",
    "steps", "batch_size", "seed", "grad_scale", "record_every",
}


class ConfigError(ValueError):
    pass


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(obj, allowed: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(repr, unknown))}")
    return obj


def _build(cls, obj, where: str):
    _check_keys(obj, _fields(cls), where)
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(doc: dict) -> RunConfig:
    _check_keys(doc, _TOP_KEYS, "config")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: expected {SCHEMA_VERSION}, got {version!r}")

    task = _build(Task, doc.get("task", {}), "config.task")
    opt = dict(_check_keys(doc.get("optimizer", {}), _fields(HyperParams), "config.optimizer"))
    if "schedule" in opt:
        opt["schedule"] = _build(Schedule, opt["schedule"], "config.optimizer.schedule")
    hp = _build(HyperParams, opt, "config.optimizer")
    try:
        strategy = Strategy.parse(
            str(doc.get("strategy", "C")),
            doc.get("work_format", "bf16"),
            doc.get("high_format", "fp32"),
        )
    except ValueError as exc:
        raise ConfigError(f"config.strategy: {exc}") from None

    run_keys = {k: doc[k] for k in ("steps", "batch_size", "seed", "grad_scale", "record_every") if k in doc}
    for k, val in run_keys.items():
        want = float if k == "grad_scale" else int
        if isinstance(val, bool) or not isinstance(val, (int, float) if want is float else int):
            raise ConfigError(f"config.{k}: expected {want.__name__}, got {val!r}")
    try:
        return RunConfig(task=task, strategy=strategy, hp=hp, **run_keys)
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from None


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return parse_config(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_to_dict(cfg: RunConfig) -> dict:
    hp = dataclasses.asdict(cfg.hp)
    return {
        "schema_version": SCHEMA_VERSION,
        "task": dataclasses.asdict(cfg.task),
        "strategy": cfg.strategy.tag.value,
        "work_format": cfg.strategy.work_format.name,
        "high_format": cfg.strategy.high_format.name,
        "optimizer": hp,
        "steps": cfg.steps,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "grad_scale": cfg.grad_scale,
        "record_every": cfg.record_every,
    }
