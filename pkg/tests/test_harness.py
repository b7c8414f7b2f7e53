"""Trial execution, classification, aggregation, and resumable studies."""

import json
from dataclasses import replace

import numpy as np
import pytest

from helpers import smoke_workload
from sparselab.exceptions import ConfigError
from sparselab.harness import (COMPLETE, INCOMPLETE, INFEASIBLE, StudyConfig,
                               StudyPoint, TrialRecord, aggregate, best_trial,
                               load_records, planned_trials, run_study,
                               run_trial, steps_to_result, trial_key,
                               write_summary, read_summary)
from sparselab.quasirand import SearchSpace

ETA = {"eta_bar": 0.1}

# Frozen from the first audited run of the smoke workload; any pipeline
# change that alters the trajectory will trip the regression test below.
SMOKE_STEPS_TO_GOAL = 16


def test_goal_one_completes_at_first_evaluation():
    wl = replace(smoke_workload(), goal_error=1.0)
    rec = run_trial(wl, StudyPoint(16, 0.0), ETA, seed=1)
    assert rec.status == COMPLETE
    assert rec.steps_to_goal == wl.eval_interval


def overlapping_workload(**kwargs):
    # Heavy class overlap, so a zero validation error is unattainable.
    wl = smoke_workload(**kwargs)
    return replace(wl, dataset={**wl.dataset, "separation": 1.0})


def test_unreachable_goal_with_tiny_budget_is_incomplete():
    wl = replace(overlapping_workload(), goal_error=0.0, max_steps=32)
    rec = run_trial(wl, StudyPoint(16, 0.0), ETA, seed=1)
    assert rec.status == INCOMPLETE
    assert rec.steps_to_goal is None


def test_huge_learning_rate_is_infeasible():
    rec = run_trial(smoke_workload(), StudyPoint(16, 0.0), {"eta_bar": 1e6}, seed=1)
    assert rec.status == INFEASIBLE
    assert rec.steps_to_goal is None


def test_statuses_are_exclusive_and_total():
    records = [
        run_trial(replace(smoke_workload(), goal_error=1.0), StudyPoint(16, 0.0), ETA, 1),
        run_trial(replace(overlapping_workload(), goal_error=0.0, max_steps=32),
                  StudyPoint(16, 0.0), ETA, 1),
        run_trial(smoke_workload(), StudyPoint(16, 0.0), {"eta_bar": 1e6}, 1),
    ]
    assert [r.status for r in records] == [COMPLETE, INCOMPLETE, INFEASIBLE]
    for r in records:
        assert (r.status == COMPLETE) == (r.steps_to_goal is not None)


def test_steps_to_goal_is_multiple_of_eval_interval():
    rec = run_trial(smoke_workload(), StudyPoint(8, 0.0), {"eta_bar": 0.05}, seed=2)
    assert rec.status == COMPLETE
    assert rec.steps_to_goal % smoke_workload().eval_interval == 0


def test_trial_record_fully_determined_by_inputs():
    wl = smoke_workload()
    a = run_trial(wl, StudyPoint(8, 0.5), ETA, seed=3, trial_index=4)
    b = run_trial(wl, StudyPoint(8, 0.5), ETA, seed=3, trial_index=4)
    assert a.to_json() == b.to_json()


def test_smoke_regression_steps_to_goal():
    rec = run_trial(smoke_workload(), StudyPoint(16, 0.0), {"eta_bar": 0.1}, seed=1)
    assert rec.status == COMPLETE
    assert rec.steps_to_goal == SMOKE_STEPS_TO_GOAL


def test_wide_separation_linear_model_reaches_two_percent():
    # Frozen end-to-end baseline: separation-50 blobs are linearly separable,
    # so a bare affine classifier reaches 2% validation error within budget.
    wl = replace(smoke_workload(widths=(), max_steps=2000), goal_error=0.02)
    wl = replace(wl, dataset={**wl.dataset, "separation": 50.0})
    rec = run_trial(wl, StudyPoint(16, 0.0), {"eta_bar": 0.05}, seed=1)
    assert rec.status == COMPLETE


def test_batch_size_larger_than_training_set_rejected():
    with pytest.raises(ConfigError):
        run_trial(smoke_workload(), StudyPoint(100000, 0.0), ETA, seed=1)


def test_mask_stays_intact_through_a_sparse_trial():
    wl = smoke_workload(max_steps=200, goal=0.0)
    rec = run_trial(wl, StudyPoint(16, 0.7), ETA, seed=4)
    assert rec.status in (INCOMPLETE, COMPLETE)


def test_steps_to_result_takes_minimum():
    def rec(status, steps, key):
        return TrialRecord(key, 8, 0.0, 0, ETA, 0, status, steps, [], 1.0)
    records = [rec(COMPLETE, 320, "b"), rec(COMPLETE, 160, "a"),
               rec(INCOMPLETE, None, "c")]
    assert steps_to_result(records) == 160
    assert best_trial(records).trial_key == "a"


def test_steps_to_result_absent_when_none_complete():
    records = [TrialRecord("x", 8, 0.0, 0, ETA, 0, INCOMPLETE, None, [], 1.0)]
    assert steps_to_result(records) is None


def test_steps_to_result_tie_keeps_smallest_trial_key():
    def rec(key):
        return TrialRecord(key, 8, 0.0, 0, ETA, 0, COMPLETE, 480, [], 1.0)
    assert best_trial([rec("zz"), rec("aa"), rec("mm")]).trial_key == "aa"
    assert steps_to_result([rec("zz")]) == 480 and 480 % 16 == 0


def test_trial_key_is_stable():
    key = trial_key("smoke", StudyPoint(16, 0.5), 3, 11)
    assert key == trial_key("smoke", StudyPoint(16, 0.5), 3, 11)
    assert len(key) == 16
    assert key != trial_key("smoke", StudyPoint(16, 0.5), 3, 12)


def smoke_config(goal=0.25, budget=3):
    return StudyConfig(
        workload=smoke_workload(goal=goal),
        batch_sizes=[8, 16],
        sparsities=[0.0],
        budget=budget,
        seed=1,
        search_spaces=[SearchSpace("eta_bar", "log10", 0.02, 0.3)],
    )


def test_run_study_single_trial_trivial_goal(tmp_path):
    cfg = smoke_config(goal=1.0, budget=1)
    cfg.batch_sizes = [8]
    table = run_study(cfg, tmp_path / "records.jsonl")
    assert table.cell(8, 0.0).k_star == 16


def test_run_study_resume_skips_completed_trials(tmp_path):
    cfg = smoke_config()
    path = tmp_path / "records.jsonl"
    first = run_study(cfg, path)
    executed = []
    second = run_study(cfg, path, progress=executed.append)
    assert executed == []   # nothing re-run
    for c1, c2 in zip(first.cells, second.cells):
        assert c1 == c2
    keys = [json.loads(line)["trial_key"] for line in path.read_text().splitlines()]
    assert len(keys) == len(set(keys)) == len(planned_trials(cfg))


def test_run_study_resumes_after_interruption(tmp_path):
    cfg = smoke_config()
    path = tmp_path / "records.jsonl"
    full = run_study(cfg, path)
    lines = path.read_text().splitlines()
    # keep a prefix plus a torn final line, as if the process died mid-append
    path.write_text("\n".join(lines[:2]) + "\n" + lines[2][:25])
    resumed = run_study(cfg, path)
    for c1, c2 in zip(full.cells, resumed.cells):
        assert c1 == c2
    # the torn trial was redone; every planned key is present exactly once
    loaded = load_records(path)
    assert set(loaded) == {key for *_, key in planned_trials(cfg)}


def test_run_study_parallel_matches_serial(tmp_path):
    cfg = smoke_config(budget=2)
    serial = run_study(cfg, tmp_path / "serial.jsonl", workers=1)
    parallel = run_study(cfg, tmp_path / "parallel.jsonl", workers=2)
    for c1, c2 in zip(serial.cells, parallel.cells):
        assert c1 == c2


def test_summary_roundtrip(tmp_path):
    cfg = smoke_config(budget=2)
    table = run_study(cfg, tmp_path / "records.jsonl")
    path = tmp_path / "summary.csv"
    write_summary(table, path)
    rows = read_summary(path)
    assert len(rows) == len(table.cells)
    for row, cell in zip(rows, table.cells):
        assert row["B"] == cell.batch_size
        assert row["K_star"] == cell.k_star
        assert int(row["n_complete"]) == cell.n_complete
    header = path.read_text().splitlines()[1]
    assert header == ("B,s,K_star,eta_star,momentum_star,"
                      "n_complete,n_incomplete,n_infeasible")


def test_aggregate_is_order_independent():
    cfg = smoke_config(budget=2)
    plan = planned_trials(cfg)
    records = [run_trial(cfg.workload, point, mp, seed, i)
               for point, i, mp, seed, _ in plan]
    forward = aggregate(records, cfg)
    backward = aggregate(records[::-1], cfg)
    assert forward == backward


def test_load_records_ignores_garbage_lines(tmp_path):
    path = tmp_path / "records.jsonl"
    rec = TrialRecord("k1", 8, 0.0, 0, ETA, 0, COMPLETE, 32, [(16, 0.5)], 1.0)
    path.write_text(rec.to_json() + "\n{not json\n")
    loaded = load_records(path)
    assert set(loaded) == {"k1"}
    assert loaded["k1"].history == [(16, 0.5)]
