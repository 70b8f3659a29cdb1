import csv
import json

import pytest

from adaas.experiment import ExperimentConfig, build_runs, run_experiment
from adaas.workload import FAULT_TYPES

SMALL = dict(days=2, fault_window_days=(0.5, 1.0), window_minutes=(20,), past_minutes=(10,),
             train_runs=1, write_samples=False)


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    return run_experiment(ExperimentConfig(**SMALL), a), run_experiment(ExperimentConfig(**SMALL), b)


def test_rerun_is_byte_identical(small_runs):
    first, second = small_runs
    for name in ("grid.csv", "leadtimes.csv", "runs.csv"):
        assert (first.out_dir / name).read_bytes() == (second.out_dir / name).read_bytes()
    for run in first.runs:
        a = first.out_dir / "runs" / run.name / "anomalies_past10.jsonl"
        assert a.read_bytes() == (second.out_dir / "runs" / run.name / "anomalies_past10.jsonl").read_bytes()


def test_output_layout(small_runs):
    result, _ = small_runs
    out = result.out_dir
    assert len([d for d in (out / "runs").iterdir() if d.is_dir()]) == 13
    with open(out / "leadtimes.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["fault_type", "lead_time_avg_min"] and [r[0] for r in rows[1:]] == list(FAULT_TYPES)
    with open(out / "grid.csv") as f:
        assert len(list(csv.reader(f))) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["checks"]["failing_runs"] == 12 and summary["checks"]["grid_cells"] == 1


def test_build_runs_shape():
    train, runs = build_runs(ExperimentConfig(**SMALL))
    assert len(train) == 1 and len(runs) == 13
    assert runs[0].fault is None
    for run in runs[1:]:
        assert run.fault is not None
        if run.failure_time_ms is not None:
            assert run.timestamps[-1] == run.failure_time_ms


def test_config_round_trip(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"seed": 3, "window_minutes": [15, 25]}))
    cfg = ExperimentConfig.load(p)
    assert cfg.seed == 3 and cfg.window_minutes == (15, 25)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"seeds": 3})
