"""End-to-end failure-prediction experiment on synthetic runs.

Generates one failure-free run and twelve failing runs (four fault types
times three activation patterns) plus separate failure-free training runs,
runs sigma-limit detectors on every KPI, and sweeps the window length and
the detector history over the grid below.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .dataio import AnomalyRecord, SinkSpec, SourceSpec
from .detectors import SigmaLimitParams, Sample, detect_batch
from .prediction import (
    PAST_MINUTES,
    WINDOW_MINUTES,
    EvalReport,
    NoveltyModelParams,
    RunPredictions,
    evaluate,
    fit_model,
    fmt_metric,
    window_counts,
)
from .specs import DetectorSpec
from .workload import (
    FAULT_TYPES,
    MINUTE_MS,
    Constant,
    Exponential,
    FaultSpec,
    Random,
    SimRun,
    WorkloadProfile,
    emit_run,
    generate_normal_run,
    inject_fault,
)

log = logging.getLogger(__name__)

ACTIVATIONS = ("constant", "exponential", "random")
# figures measured on a real testbed; synthetic runs are not expected to match them
TESTBED_REFERENCE = {"window_minutes": 20, "past_minutes": 10, "precision": 0.96, "recall": 0.86}


@dataclass
class ExperimentConfig:
    seed: int = 7
    days: int = 7
    window_minutes: tuple[int, ...] = WINDOW_MINUTES
    past_minutes: tuple[int, ...] = PAST_MINUTES
    reference: tuple[int, int] = (20, 10)  # (W, past) used for the lead-time table
    sigma: float = 3.0
    k: int = 7
    step_minutes: int = 1
    model_kind: str = "ocsvm"
    nu: float = 0.05
    gamma: float | None = None
    quantile: float = 0.99
    train_runs: int = 3
    train_stride: int = 7
    activation_rate: float = 0.1  # per minute: constant/random rate, initial exponential rate
    doubling_minutes: float = 90.0
    fault_window_days: tuple[float, float] = (2.0, 4.0)  # fault starts fall in this range
    write_samples: bool = True
    write_anomalies: bool = True

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment config keys: {', '.join(sorted(extra))}")
        d = dict(d)
        for key in ("window_minutes", "past_minutes", "reference", "fault_window_days"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass
class ExperimentResult:
    reports: list[EvalReport]
    runs: list[SimRun]
    out_dir: Path | None
    seconds: float
    checks: dict[str, Any] = field(default_factory=dict)

    def report(self, w: int, past: int) -> EvalReport:
        for r in self.reports:
            if r.window_minutes == w and r.past_minutes == past:
                return r
        raise KeyError((w, past))


def build_runs(cfg: ExperimentConfig) -> tuple[list[SimRun], list[SimRun]]:
    """Training runs plus the 13 evaluation runs (normal first)."""
    duration = cfg.days * 1440
    train = [generate_normal_run(WorkloadProfile(seed=cfg.seed + 1000 + j), duration, name=f"training{j}")
             for j in range(cfg.train_runs)]
    runs = [generate_normal_run(WorkloadProfile(seed=cfg.seed), duration, name="normal")]
    rng = np.random.default_rng([cfg.seed, 42])
    lo, hi = (int(d * 1440) for d in cfg.fault_window_days)
    i = 0
    for fault_type in FAULT_TYPES:
        for act_name in ACTIVATIONS:
            i += 1
            profile = WorkloadProfile(seed=cfg.seed + i)
            base = generate_normal_run(profile, duration, name=f"{fault_type}_{act_name}")
            start_ms = profile.start_ms + int(rng.integers(lo, hi)) * MINUTE_MS
            if act_name == "constant":
                act = Constant(cfg.activation_rate)
            elif act_name == "exponential":
                act = Exponential(cfg.activation_rate, cfg.doubling_minutes)
            else:
                act = Random(cfg.activation_rate, seed=cfg.seed * 100 + i)
            runs.append(inject_fault(base, FaultSpec(fault_type, act, start_ms)).truncated())
    return train, runs


def detector_spec(run: SimRun, kpi: str, past: int, sigma: float) -> DetectorSpec:
    return DetectorSpec(
        kpi, "sigma_limit", {"window_size": past, "sigma": sigma},
        SourceSpec("csv", path=f"runs/{run.name}/samples.csv"),
        SinkSpec("jsonl", path=f"runs/{run.name}/anomalies_past{past}.jsonl"),
    )


def detect_run(run: SimRun, past: int, sigma: float = 3.0) -> list[AnomalyRecord]:
    """Sigma-limit anomalies on every KPI of ``run``, ordered by (time, KPI order)."""
    params = SigmaLimitParams(past, sigma)
    recs: list[tuple[int, int, AnomalyRecord]] = []
    ts = run.timestamps.tolist()
    for j, kpi in enumerate(run.kpis):
        spec = detector_spec(run, kpi, past, sigma)
        series = [Sample(t, kpi, v) for t, v in zip(ts, run.values[kpi].tolist())]
        for idx, verdict in detect_batch(params, series):
            recs.append((ts[idx], j, spec.record(series[idx], verdict)))
    recs.sort(key=lambda r: (r[0], r[1]))
    return [r[2] for r in recs]


def _counts(records: list[AnomalyRecord], run: SimRun, w: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    index = {k: i for i, k in enumerate(run.kpis)}
    per_kpi: list[list[int]] = [[] for _ in run.kpis]
    for r in records:
        per_kpi[index[r.kpi]].append(r.timestamp_ms)
    start = int(run.timestamps[0])
    end = int(run.timestamps[-1]) + MINUTE_MS
    w_ms, step_ms = w * MINUTE_MS, step * MINUTE_MS
    X = window_counts([np.asarray(t, dtype=np.int64) for t in per_kpi], start, end, w_ms, step_ms)
    ends = start + w_ms + step_ms * np.arange(len(X), dtype=np.int64)
    return X.astype(float), ends


def run_experiment(cfg: ExperimentConfig | None = None, out_dir=None) -> ExperimentResult:
    cfg = cfg or ExperimentConfig()
    t0 = time.monotonic()
    out = Path(out_dir) if out_dir is not None else None
    train, runs = build_runs(cfg)
    if out is not None:
        for run in runs:
            d = out / "runs" / run.name
            if cfg.write_samples:
                emit_run(run, d)
            else:
                d.mkdir(parents=True, exist_ok=True)
        if cfg.write_samples:
            for t in train:
                emit_run(t, out / "training" / t.name)
    reports = []
    for past in cfg.past_minutes:
        anomalies = {run.name: detect_run(run, past, cfg.sigma) for run in train + runs}
        if out is not None and cfg.write_anomalies:
            for run in runs:
                path = out / "runs" / run.name / f"anomalies_past{past}.jsonl"
                with open(path, "w", encoding="utf-8") as f:
                    f.writelines(r.to_json() + "\n" for r in anomalies[run.name])
        for w in cfg.window_minutes:
            params = NoveltyModelParams(cfg.model_kind, cfg.quantile, cfg.nu, cfg.gamma, w, past)
            X_train = np.vstack([_counts(anomalies[t.name], t, w, cfg.step_minutes)[0][::cfg.train_stride]
                                 for t in train])
            model = fit_model(params, X_train)
            preds = []
            for run in runs:
                X, ends = _counts(anomalies[run.name], run, w, cfg.step_minutes)
                f = run.fault
                preds.append(RunPredictions(
                    run.name, ends, model.predict(X) if len(X) else np.zeros(0, bool),
                    f.fault_type if f else None, f.start_ms if f else None, run.failure_time_ms))
            attribution = {"kind": cfg.model_kind, "nu": cfg.nu,
                           "gamma": getattr(model, "gamma_", cfg.gamma),
                           "quantile": cfg.quantile, "k": cfg.k,
                           "train_windows": int(len(X_train))}
            reports.append(evaluate(preds, cfg.k, w, past, attribution))
            log.info("W=%d past=%d precision=%s recall=%s", w, past,
                     fmt_metric(reports[-1].precision), fmt_metric(reports[-1].recall))
    reports.sort(key=lambda r: (r.window_minutes, r.past_minutes))
    result = ExperimentResult(reports, runs, out, time.monotonic() - t0)
    result.checks = acceptance_checks(result, cfg)
    if out is not None:
        write_outputs(result, cfg)
    return result


def acceptance_checks(result: ExperimentResult, cfg: ExperimentConfig) -> dict[str, Any]:
    ref = result.report(*cfg.reference)
    failing = len(ref.lead_time_ms)
    return {
        "predicted_failing_runs": ref.predicted_runs,
        "failing_runs": failing,
        "normal_false_stable_rate": ref.normal_stable_rate,
        "fault_lead_time_min": {f: (None if v is None else v / MINUTE_MS)
                                for f, v in ref.fault_lead_time_ms.items()},
        "grid_cells": len(result.reports),
    }


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig) -> None:
    out = result.out_dir
    with open(out / "grid.csv", "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["W", "past", "precision", "recall", "event_precision"])
        for r in result.reports:
            wr.writerow([r.window_minutes, r.past_minutes, fmt_metric(r.precision), fmt_metric(r.recall),
                         fmt_metric(r.event_precision)])
    ref = result.report(*cfg.reference)
    with open(out / "leadtimes.csv", "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["fault_type", "lead_time_avg_min"])
        for fault in FAULT_TYPES:
            v = ref.fault_lead_time_ms.get(fault)
            wr.writerow([fault, "missed" if v is None else f"{v / MINUTE_MS:.1f}"])
    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["run", "fault_type", "activation", "fault_start_ms", "failure_time_ms", "lead_time_min"])
        for run in result.runs:
            fl = run.fault
            lead = ref.lead_time_ms.get(run.name)
            wr.writerow([run.name, fl.fault_type if fl else "", fl.activation_name if fl else "",
                         fl.start_ms if fl else "", run.failure_time_ms or "",
                         "" if fl is None else ("missed" if lead is None else f"{lead / MINUTE_MS:.1f}")])
    summary = {
        "config": asdict(cfg),
        "reference_cell": {"W": cfg.reference[0], "past": cfg.reference[1]},
        "checks": result.checks,
        "testbed_reference_not_reproduced": TESTBED_REFERENCE,
        "reports": [report_dict(r) for r in result.reports],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def report_dict(r: EvalReport) -> dict[str, Any]:
    d = asdict(r)
    d["normal_stable_rate"] = r.normal_stable_rate
    d["event_precision"] = r.event_precision
    d["notes"] = list(r.notes)
    return d
