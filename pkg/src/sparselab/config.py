"""Experiment config files.

JSON with an `include` mechanism: included files load first and the
including file's keys override them (nested dicts merge recursively),
so shared workload blocks can live in one place.

Defaults when a field is omitted follow the full-scale measurement
protocol: trial budget 100, step cap 40000, evaluation every 16 steps
for flat inputs and every 32 for image inputs.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .exceptions import ConfigError
from .harness import StudyConfig, Workload
from .models import ModelSpec
from .optim import ScheduleSpec
from .quasirand import SearchSpace

CONFIG_SCHEMA = 1
DEFAULT_BUDGET = 100
DEFAULT_MAX_STEPS = 40000
DEFAULT_EVAL_INTERVAL_FLAT = 16
DEFAULT_EVAL_INTERVAL_IMAGE = 32
DATA_ROOT_ENV = "SPARSELAB_DATA_ROOT"


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _load_tree(path: Path, seen: tuple = ()) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"config include cycle at {path}")
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    includes = raw.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = _merge(merged, _load_tree(path.parent / inc, seen + (path,)))
    return _merge(merged, raw)


def _require(tree: dict, key: str, where: str):
    if key not in tree:
        raise ConfigError(f"missing {key!r} in {where}")
    return tree[key]


def load_config(path) -> StudyConfig:
    tree = _load_tree(Path(path))
    version = tree.get("schema_version", CONFIG_SCHEMA)
    if version != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema_version {version}")

    w = _require(tree, "workload", "config")
    model_cfg = dict(_require(w, "model", "workload"))
    model_spec = ModelSpec(
        arch=_require(model_cfg, "arch", "model"),
        input_shape=tuple(_require(model_cfg, "input_shape", "model")),
        widths=tuple(_require(model_cfg, "widths", "model")),
        classes=_require(model_cfg, "classes", "model"),
        init=model_cfg.get("init", "he-uniform"),
        seed=model_cfg.get("seed", 0),
    )
    schedule_cfg = dict(w.get("schedule", {"kind": "constant"}))
    schedule = ScheduleSpec(
        kind=schedule_cfg.get("kind", "constant"),
        decay_horizon=schedule_cfg.get("decay_horizon", 0),
        floor_fraction=schedule_cfg.get("floor_fraction", 0.0),
    )
    default_interval = (DEFAULT_EVAL_INTERVAL_IMAGE
                        if len(model_spec.input_shape) == 3
                        else DEFAULT_EVAL_INTERVAL_FLAT)
    workload = Workload(
        id=_require(w, "id", "workload"),
        dataset=dict(_require(w, "dataset", "workload")),
        model_spec=model_spec,
        algorithm=w.get("algorithm", "sgd"),
        schedule=schedule,
        goal_error=float(_require(w, "goal_error", "workload")),
        eval_interval=int(w.get("eval_interval", default_interval)),
        max_steps=int(w.get("max_steps", DEFAULT_MAX_STEPS)),
        val_fraction=float(w.get("val_fraction", 0.1)),
        data_seed=int(w.get("data_seed", 0)),
    )

    study = _require(tree, "study", "config")
    spaces = [SearchSpace(name=s["name"], scale=s["scale"],
                          low=float(s["low"]), high=float(s["high"]))
              for s in _require(tree, "search_spaces", "config")]
    names = [s.name for s in spaces]
    if "eta_bar" not in names:
        raise ConfigError("search_spaces must include eta_bar")
    if workload.algorithm in ("momentum", "nesterov") and "momentum_coeff" not in names:
        raise ConfigError(f"{workload.algorithm} needs a momentum_coeff search space")

    data_root = tree.get("data_root") or os.environ.get(DATA_ROOT_ENV)
    return StudyConfig(
        workload=workload,
        batch_sizes=[int(b) for b in _require(study, "batch_sizes", "study")],
        sparsities=[float(s) for s in _require(study, "sparsities", "study")],
        budget=int(tree.get("budget", DEFAULT_BUDGET)),
        seed=int(tree.get("seed", 0)),
        search_spaces=spaces,
        data_root=data_root,
    )


def echo_config(cfg: StudyConfig) -> str:
    """One line per protocol constant, for logs and the config-echo check."""
    w = cfg.workload
    lines = [
        f"workload: {w.id}",
        f"dataset: {w.dataset.get('kind')}",
        f"model: {w.model_spec.arch} widths={list(w.model_spec.widths)} "
        f"input={list(w.model_spec.input_shape)} classes={w.model_spec.classes}",
        f"optimizer: {w.algorithm} schedule={w.schedule.kind}",
        f"goal_error: {w.goal_error}",
        f"eval_interval: {w.eval_interval}",
        f"max_steps: {w.max_steps}",
        f"budget: {cfg.budget}",
        f"batch_sizes: {cfg.batch_sizes}",
        f"sparsities: {cfg.sparsities}",
        f"seed: {cfg.seed}",
    ]
    for s in cfg.search_spaces:
        lines.append(f"search: {s.name} {s.scale} [{s.low}, {s.high}]")
    return "\n".join(lines)
