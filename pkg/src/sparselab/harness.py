"""Measurement protocol: run budgeted metaparameter trials per
(batch size, sparsity) study point and record steps-to-result.

A trial trains one freshly built (and possibly pruned-at-init) model
with seeded shuffled mini-batches, evaluating on the full validation
split every `eval_interval` steps. Its outcome is exactly one of:

* complete    -- some evaluation reached the goal error within budget
* incomplete  -- budget exhausted without reaching the goal
* infeasible  -- training diverged (non-finite loss, or loss blowing up
                 past 1e4x its initial value)

Steps-to-result K* for a study point is the lowest steps_to_goal over
its complete trials.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .data import Dataset, load_idx, split_validation, synth_dataset
from .exceptions import ConfigError, NumericOverflow
from .models import ModelSpec, build_model
from .optim import OptimizerConfig, OptimizerState, ScheduleSpec, step
from .prune import apply_mask, connection_sensitivity, topk_mask
from .quasirand import draw_assignments

RECORD_SCHEMA = 1
DIVERGENCE_FACTOR = 1e4
SALIENCY_BATCH = 128

COMPLETE = "complete"
INCOMPLETE = "incomplete"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class StudyPoint:
    batch_size: int
    sparsity: float

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError("sparsity must be in [0, 1)")


@dataclass(frozen=True)
class Workload:
    id: str
    dataset: dict                 # {"kind": "synth"|"idx", ...}
    model_spec: ModelSpec
    algorithm: str
    schedule: ScheduleSpec
    goal_error: float
    eval_interval: int
    max_steps: int
    val_fraction: float = 0.1
    data_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.goal_error <= 1.0:
            raise ConfigError("goal error must be in [0, 1]")
        if self.eval_interval < 1 or self.max_steps < 1:
            raise ConfigError("eval_interval and max_steps must be >= 1")


@dataclass
class TrialRecord:
    trial_key: str
    batch_size: int
    sparsity: float
    trial_index: int
    metaparams: dict
    seed: int
    status: str
    steps_to_goal: int | None
    history: list                 # (step, validation error) pairs
    final_loss: float
    schema: int = RECORD_SCHEMA

    def to_json(self) -> str:
        d = asdict(self)
        d["history"] = [[s, round(e, 6)] for s, e in self.history]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrialRecord":
        d = json.loads(text)
        d["history"] = [(s, e) for s, e in d["history"]]
        return cls(**d)


@dataclass
class StudyCell:
    batch_size: int
    sparsity: float
    k_star: int | None
    best_metaparams: dict | None
    n_complete: int
    n_incomplete: int
    n_infeasible: int


@dataclass
class StudyTable:
    workload_id: str
    goal_error: float
    budget: int
    cells: list = field(default_factory=list)

    def cell(self, batch_size: int, sparsity: float) -> StudyCell:
        for c in self.cells:
            if c.batch_size == batch_size and c.sparsity == sparsity:
                return c
        raise KeyError((batch_size, sparsity))

    def points(self, sparsity: float) -> list:
        """(B, K*) pairs with a measured K*, for one sparsity level."""
        return [(c.batch_size, c.k_star) for c in self.cells
                if c.sparsity == sparsity and c.k_star is not None]


@dataclass
class StudyConfig:
    workload: Workload
    batch_sizes: list
    sparsities: list
    budget: int
    seed: int
    search_spaces: list
    data_root: str | None = None


# ---------------------------------------------------------------------------
# Dataset resolution
# ---------------------------------------------------------------------------

_DATASET_CACHE: dict = {}


def resolve_dataset(workload: Workload, data_root: str | None = None):
    """Build (train, validation) splits; cached per process.

    `train_label_noise` corrupts that fraction of *training* labels
    (uniformly to another class, seeded) after the split, so validation
    error stays a clean measure while gradients carry extra variance.
    """
    key = (json.dumps(workload.dataset, sort_keys=True), workload.data_seed,
           workload.val_fraction, data_root or "")
    if key in _DATASET_CACHE:
        return _DATASET_CACHE[key]
    cfg = dict(workload.dataset)
    kind = cfg.pop("kind", None)
    train_noise = float(cfg.pop("train_label_noise", 0.0))
    if kind == "synth":
        full = synth_dataset(**cfg)
    elif kind == "idx":
        paths = []
        for name in ("images", "labels"):
            p = cfg[name]
            if data_root and not os.path.isabs(p):
                p = os.path.join(data_root, p)
            if not os.path.exists(p):
                raise FileNotFoundError(
                    f"dataset file not found: {p} (set the data root via "
                    f"--config paths, or the SPARSELAB_DATA_ROOT variable)")
            paths.append(p)
        full = load_idx(*paths)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    train, val = split_validation(full, workload.val_fraction, workload.data_seed)
    if train_noise > 0.0:
        if not train_noise < 1.0:
            raise ConfigError("train_label_noise must be in [0, 1)")
        rng = np.random.default_rng([workload.data_seed, 0xF11D])
        flip = rng.random(len(train)) < train_noise
        shift = rng.integers(1, train.num_classes, size=int(flip.sum()))
        labels = train.labels.copy()
        labels[flip] = (labels[flip] + shift) % train.num_classes
        train = Dataset(train.inputs, labels, train.num_classes)
    _DATASET_CACHE[key] = (train, val)
    return train, val


# ---------------------------------------------------------------------------
# Single trial
# ---------------------------------------------------------------------------

def trial_key(workload_id: str, point: StudyPoint, trial_index: int, seed: int) -> str:
    text = f"{workload_id}|B={point.batch_size}|s={point.sparsity}|t={trial_index}|seed={seed}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless shuffled index batches; the last short batch of each epoch is
    dropped so every gradient averages exactly batch_size samples."""
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start:start + batch_size]


def _shaped(inputs: np.ndarray, spec: ModelSpec) -> np.ndarray:
    want = (inputs.shape[0], *spec.input_shape)
    if inputs.shape == want:
        return inputs
    if int(np.prod(inputs.shape[1:])) != int(np.prod(spec.input_shape)):
        raise ConfigError(
            f"dataset sample shape {inputs.shape[1:]} incompatible with "
            f"model input {spec.input_shape}")
    return inputs.reshape(want)


def prune_at_init(model, train: Dataset, sparsity: float, seed: int):
    """Mask the model before any training step; no-op for sparsity 0."""
    if sparsity == 0.0:
        return model
    rng = np.random.default_rng([seed, 0x5A11])
    take = min(SALIENCY_BATCH, len(train))
    idx = rng.choice(len(train), size=take, replace=False)
    x = _shaped(train.inputs[idx], model.spec)
    saliency = connection_sensitivity(model, x, train.labels[idx])
    return apply_mask(model, topk_mask(saliency, sparsity))


def run_trial(workload: Workload, point: StudyPoint, metaparams: dict,
              seed: int, trial_index: int = 0, data_root: str | None = None,
              step_hook=None) -> TrialRecord:
    """Train one metaparameter assignment to completion/divergence/budget.

    Fully determined by (workload, point, metaparams, seed). `step_hook`,
    when given, is called as hook(model, step_index) after every update
    (used by the smoothness tracer; it must not mutate the model).
    """
    train, val = resolve_dataset(workload, data_root)
    if point.batch_size > len(train):
        raise ConfigError(
            f"batch size {point.batch_size} exceeds training set ({len(train)})")

    model = build_model(workload.model_spec)
    model = prune_at_init(model, train, point.sparsity, workload.data_seed)
    if step_hook is not None:
        step_hook(model, 0)

    config = OptimizerConfig(
        algorithm=workload.algorithm,
        eta_bar=metaparams["eta_bar"],
        momentum_coeff=metaparams.get("momentum_coeff", 0.0),
        schedule=workload.schedule,
    )
    state = OptimizerState.fresh(model.param_count)
    order_rng = np.random.default_rng([seed, 0x02DE])

    key = trial_key(workload.id, point, trial_index, seed)
    val_x = _shaped(val.inputs, workload.model_spec)
    history = []
    status = INCOMPLETE
    steps_to_goal = None
    loss = float("nan")
    initial_loss = None

    batches = _batches(len(train), point.batch_size, order_rng)
    for k in range(1, workload.max_steps + 1):
        idx = next(batches)
        try:
            loss, _, grad = nn.batch_gradient(
                model, _shaped(train.inputs[idx], workload.model_spec),
                train.labels[idx])
            if initial_loss is None:
                initial_loss = loss
            if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * max(initial_loss, 1e-12):
                status = INFEASIBLE
                break
            step(model, grad, config, state)
        except NumericOverflow:
            status = INFEASIBLE
            break
        if step_hook is not None:
            step_hook(model, k)
        if k % workload.eval_interval == 0:
            logits, _ = nn.forward(model, val_x)
            _, err = nn.loss_and_error(logits, val.labels)
            history.append((k, err))
            if err <= workload.goal_error:
                status = COMPLETE
                steps_to_goal = k
                break

    if np.any(model.params[model.mask == 0.0] != 0.0):
        raise RuntimeError(f"trial {key}: mask violated during training")
    return TrialRecord(
        trial_key=key, batch_size=point.batch_size, sparsity=point.sparsity,
        trial_index=trial_index, metaparams=dict(metaparams), seed=seed,
        status=status, steps_to_goal=steps_to_goal, history=history,
        final_loss=float(loss))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def steps_to_result(records: list) -> int | None:
    """Lowest steps_to_goal over complete records; None if none complete."""
    best = best_trial(records)
    return None if best is None else best.steps_to_goal


def best_trial(records: list) -> TrialRecord | None:
    """The fastest complete trial; ties keep the smallest trial key."""
    complete = [r for r in records if r.status == COMPLETE]
    if not complete:
        return None
    return min(complete, key=lambda r: (r.steps_to_goal, r.trial_key))


def aggregate(records: list, cfg: StudyConfig) -> StudyTable:
    """Deterministic study table regardless of record arrival order."""
    table = StudyTable(cfg.workload.id, cfg.workload.goal_error, cfg.budget)
    for s in cfg.sparsities:
        for b in cfg.batch_sizes:
            cell_records = [r for r in records
                            if r.batch_size == b and r.sparsity == s]
            best = best_trial(cell_records)
            table.cells.append(StudyCell(
                batch_size=b, sparsity=s,
                k_star=None if best is None else best.steps_to_goal,
                best_metaparams=None if best is None else best.metaparams,
                n_complete=sum(r.status == COMPLETE for r in cell_records),
                n_incomplete=sum(r.status == INCOMPLETE for r in cell_records),
                n_infeasible=sum(r.status == INFEASIBLE for r in cell_records),
            ))
    return table


# ---------------------------------------------------------------------------
# Study loop with resumable persistence
# ---------------------------------------------------------------------------

def load_records(path) -> dict:
    """Existing records keyed by trial key; tolerates a torn final line."""
    records = {}
    if not os.path.exists(path):
        return records
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                rec = TrialRecord.from_json(line)
            except (json.JSONDecodeError, KeyError, TypeError):
                continue    # torn append from an interrupted run: redo it
            records[rec.trial_key] = rec
    return records


def append_record(path, record: TrialRecord):
    try:
        with open(path, "ab") as f:
            if f.tell() > 0:
                with open(path, "rb") as check:
                    check.seek(-1, os.SEEK_END)
                    torn = check.read(1) != b"\n"
                if torn:      # previous writer died mid-line; start fresh
                    f.write(b"\n")
            f.write(record.to_json().encode() + b"\n")
            f.flush()
    except OSError as e:
        raise OSError(f"failed to persist trial {record.trial_key}: {e}") from e


def planned_trials(cfg: StudyConfig) -> list:
    """Every (point, trial_index, metaparams, seed, key) in the study.

    The Sobol sequence restarts per study point, so all points search the
    same metaparameter candidates.
    """
    assignments = draw_assignments(cfg.search_spaces, cfg.budget)
    plan = []
    for s in cfg.sparsities:
        for b in cfg.batch_sizes:
            point = StudyPoint(b, s)
            for i, metaparams in enumerate(assignments):
                seed = cfg.seed + i
                plan.append((point, i, metaparams, seed,
                             trial_key(cfg.workload.id, point, i, seed)))
    return plan


def _trial_task(args):
    workload, point, metaparams, seed, index, data_root = args
    return run_trial(workload, point, metaparams, seed, index, data_root)


def run_study(cfg: StudyConfig, records_path, workers: int = 1,
              progress=None) -> StudyTable:
    """Run (or resume) a full study; returns the aggregated table.

    Completed trials found in the records file are skipped, so reruns
    after interruption execute only the missing work.
    """
    existing = load_records(records_path)
    plan = planned_trials(cfg)
    todo = [(cfg.workload, point, mp, seed, i, cfg.data_root)
            for point, i, mp, seed, key in plan if key not in existing]

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_trial_task, t) for t in todo]
            for fut in as_completed(futures):
                rec = fut.result()
                append_record(records_path, rec)
                existing[rec.trial_key] = rec
                if progress:
                    progress(rec)
    else:
        for t in todo:
            rec = _trial_task(t)
            append_record(records_path, rec)
            existing[rec.trial_key] = rec
            if progress:
                progress(rec)

    planned_keys = {key for *_, key in plan}
    records = [existing[k] for k in sorted(planned_keys) if k in existing]
    return aggregate(records, cfg)


def write_summary(table: StudyTable, path):
    """Comma-separated study summary, one row per (B, s)."""
    with open(path, "w") as f:
        f.write(f"# sparselab-summary v{RECORD_SCHEMA} workload={table.workload_id} "
                f"goal={table.goal_error} budget={table.budget}\n")
        f.write("B,s,K_star,eta_star,momentum_star,"
                "n_complete,n_incomplete,n_infeasible\n")
        for c in table.cells:
            k = "" if c.k_star is None else c.k_star
            eta = mom = ""
            if c.best_metaparams:
                if "eta_bar" in c.best_metaparams:
                    eta = f"{c.best_metaparams['eta_bar']:.8g}"
                if "momentum_coeff" in c.best_metaparams:
                    mom = f"{c.best_metaparams['momentum_coeff']:.8g}"
            f.write(f"{c.batch_size},{c.sparsity},{k},{eta},{mom},"
                    f"{c.n_complete},{c.n_incomplete},{c.n_infeasible}\n")


def read_summary(path) -> list:
    """Rows of the summary file as dicts (K_star parsed to int or None)."""
    rows = []
    with open(path) as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    for line in lines[1:]:
        parts = line.strip().split(",")
        if len(parts) != len(header):
            continue
        row = dict(zip(header, parts))
        row["B"] = int(row["B"])
        row["s"] = float(row["s"])
        row["K_star"] = int(row["K_star"]) if row["K_star"] else None
        rows.append(row)
    return rows
