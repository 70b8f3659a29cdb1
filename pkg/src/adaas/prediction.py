"""Failure prediction from anomaly streams.

Anomalies are turned into per-KPI count vectors over sliding windows, a
novelty model trained on failure-free runs flags unusual windows, and a
prediction is reported once it has been stable for ``k`` consecutive windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .dataio import AnomalyRecord
from .errors import InputError
from .ocsvm import OneClassSVM

MINUTE_MS = 60_000
WINDOW_MINUTES = (15, 20, 25)
PAST_MINUTES = (10, 20, 50, 100)


@dataclass(frozen=True)
class FeatureWindow:
    window_start_ms: int
    window_end_ms: int
    counts: tuple[int, ...]
    label: str | None = None  # "normal" | "failing"


@dataclass(frozen=True)
class NoveltyModelParams:
    model_kind: str = "centroid"  # "centroid" | "ocsvm"
    quantile: float = 0.99
    nu: float = 0.05
    gamma: float | None = None  # None: 1 / dimension
    window_minutes: int = 20
    past_data_minutes: int = 10

    def __post_init__(self):
        if self.model_kind not in ("centroid", "ocsvm"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if not 0 < self.nu <= 1:
            raise ValueError("nu must be in (0, 1]")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not 0 < self.quantile < 1:
            raise ValueError("quantile must be in (0, 1)")


def extract_windows(anomalies: Iterable[AnomalyRecord], kpi_order: Sequence[str],
                    window_minutes: float, step_minutes: float = 1,
                    start_ms: int | None = None, end_ms: int | None = None,
                    unknown: str = "error", label: str | None = None) -> list[FeatureWindow]:
    """Count anomalies per KPI in half-open windows ``[start, start + W)``.

    Windows start every ``step_minutes`` from ``start_ms`` and are kept while
    they end no later than ``end_ms``. Both bounds default to the span of the
    records. ``unknown`` is "error" or "drop" for records on other KPIs.
    """
    if step_minutes > window_minutes:
        raise InputError("step must not exceed the window length")
    if unknown not in ("error", "drop"):
        raise InputError("unknown must be 'error' or 'drop'")
    index = {k: i for i, k in enumerate(kpi_order)}
    per_kpi: list[list[int]] = [[] for _ in kpi_order]
    last = None
    for rec in anomalies:
        if last is not None and rec.timestamp_ms < last:
            raise InputError("anomalies must be time-ordered")
        last = rec.timestamp_ms
        i = index.get(rec.kpi)
        if i is None:
            if unknown == "error":
                raise InputError(f"anomaly on unknown KPI {rec.kpi!r}")
            continue
        per_kpi[i].append(rec.timestamp_ms)
    all_ts = [t for ts in per_kpi for t in ts]
    if start_ms is None or end_ms is None:
        if not all_ts:
            raise InputError("window bounds are required for an empty stream")
        start_ms = min(all_ts) if start_ms is None else start_ms
        end_ms = max(all_ts) + 1 if end_ms is None else end_ms
    w_ms = int(round(window_minutes * MINUTE_MS))
    step_ms = int(round(step_minutes * MINUTE_MS))
    counts = window_counts([np.asarray(ts, dtype=np.int64) for ts in per_kpi],
                           start_ms, end_ms, w_ms, step_ms)
    starts = start_ms + step_ms * np.arange(counts.shape[0], dtype=np.int64)
    return [FeatureWindow(int(s), int(s) + w_ms, tuple(int(c) for c in row), label)
            for s, row in zip(starts, counts)]


def window_counts(per_kpi_ts: Sequence[np.ndarray], start_ms: int, end_ms: int,
                  w_ms: int, step_ms: int) -> np.ndarray:
    """Matrix of counts, one row per window, one column per KPI."""
    n = max(0, (end_ms - start_ms - w_ms) // step_ms + 1)
    starts = start_ms + step_ms * np.arange(n, dtype=np.int64)
    out = np.zeros((n, len(per_kpi_ts)), dtype=np.int64)
    for j, ts in enumerate(per_kpi_ts):
        ts = np.sort(ts)
        out[:, j] = np.searchsorted(ts, starts + w_ms, "left") - np.searchsorted(ts, starts, "left")
    return out


def as_matrix(windows: Sequence[FeatureWindow]) -> np.ndarray:
    return np.array([w.counts for w in windows], dtype=float).reshape(len(windows), -1)


class CentroidModel:
    """Distance-to-mean novelty model with a training-quantile threshold."""

    def __init__(self, quantile: float = 0.99):
        self.quantile = quantile

    def fit(self, X) -> CentroidModel:
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            raise InputError("empty training set")
        self.center_ = X.mean(0)
        self.threshold_ = float(np.quantile(self.distance(X), self.quantile))
        return self

    def distance(self, X) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(np.asarray(X, dtype=float)) - self.center_, axis=1)

    def predict(self, X) -> np.ndarray:
        return self.distance(X) > self.threshold_


def fit_centroid_model(train: Sequence[FeatureWindow], q: float) -> CentroidModel:
    if not train:
        raise InputError("empty training set")
    return CentroidModel(q).fit(as_matrix(train))


def fit_ocsvm(train: Sequence[FeatureWindow], nu: float = 0.05, gamma: float | None = None) -> OneClassSVM:
    if not train:
        raise InputError("empty training set")
    return OneClassSVM(nu=nu, gamma=gamma).fit(as_matrix(train))


def fit_model(params: NoveltyModelParams, X):
    if params.model_kind == "centroid":
        return CentroidModel(params.quantile).fit(X)
    return OneClassSVM(nu=params.nu, gamma=params.gamma).fit(X)


# --------------------------------------------------------------------------
# stability


class PredictionEvent(NamedTuple):
    index: int  # position of the first trigger
    timestamp_ms: int | None
    consecutive_count: int  # length of the maximal positive run
    run_start: int

    @property
    def window_ids(self) -> tuple[int, ...]:
        """The k windows that triggered."""
        return tuple(range(self.run_start, self.index + 1))


def stability_filter(raw: Sequence[bool], k: int = 7,
                     timestamps: Sequence[int] | None = None) -> list[PredictionEvent]:
    """One event per maximal run of at least ``k`` positives, at its k-th element."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ev = PredictionEvent
    out = []
    c = i = 0
    for v in raw:
        if v:
            c += 1
        elif c:
            if c >= k:
                out.append(ev(i - c + k - 1, None, c, i - c))
            c = 0
        i += 1
    if c >= k:
        out.append(ev(i - c + k - 1, None, c, i - c))
    if timestamps is not None:
        out = [e._replace(timestamp_ms=int(timestamps[e.index])) for e in out]
    return out


def stable_mask(raw: Sequence[bool], k: int = 7) -> np.ndarray:
    """True at t where raw[t-k+1..t] are all positive."""
    run = []
    c = 0
    for v in np.asarray(raw, dtype=bool).tolist():
        c = c + 1 if v else 0
        run.append(c)
    return np.asarray(run, dtype=np.int64) >= k


# --------------------------------------------------------------------------
# evaluation


@dataclass
class RunPredictions:
    """Window-level predictions for one run.

    ``window_end_ms`` is the prediction time of each window. Failing runs
    carry ``fault_start_ms`` and ``failure_time_ms``; normal runs carry neither.
    """

    name: str
    window_end_ms: np.ndarray
    raw: np.ndarray
    fault_type: str | None = None
    fault_start_ms: int | None = None
    failure_time_ms: int | None = None

    @property
    def failing(self) -> bool:
        return self.fault_type is not None


@dataclass
class EvalReport:
    window_minutes: int | None
    past_minutes: int | None
    precision: float | None  # stable windows before failure / all stable windows; None for 0/0
    recall: float | None
    predicted_windows: int
    true_windows: int
    true_events: int
    false_events: int
    faulty_windows: int
    faulty_positive: int
    normal_windows: int
    normal_stable_windows: int
    lead_time_ms: dict[str, int | None] = field(default_factory=dict)  # None: missed
    fault_lead_time_ms: dict[str, float | None] = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    notes: tuple[str, ...] = (
        "precision counts stable windows; in failing runs every one before the failure is true",
        "recall counts only windows ending after fault activation",
        "event_precision counts events; events before fault activation are false",
    )

    @property
    def normal_stable_rate(self) -> float | None:
        return self.normal_stable_windows / self.normal_windows if self.normal_windows else None

    @property
    def event_precision(self) -> float | None:
        n = self.true_events + self.false_events
        return self.true_events / n if n else None

    @property
    def predicted_runs(self) -> int:
        return sum(v is not None for v in self.lead_time_ms.values())


def evaluate(runs: Sequence[RunPredictions], k: int = 7, window_minutes: int | None = None,
             past_minutes: int | None = None, model: dict | None = None) -> EvalReport:
    tp = fp = faulty = faulty_pos = normal = normal_stable = 0
    predicted = true_windows = 0
    lead: dict[str, int | None] = {}
    by_fault: dict[str, list[int]] = {}
    for run in sorted(runs, key=lambda r: r.name):
        ends = np.asarray(run.window_end_ms, dtype=np.int64)
        raw = np.asarray(run.raw, dtype=bool)
        events = stability_filter(raw, k, ends)
        stable = stable_mask(raw, k)
        predicted += int(stable.sum())
        if not run.failing:
            fp += len(events)
            normal += len(raw)
            normal_stable += int(stable.sum())
            continue
        if run.failure_time_ms is None or run.fault_start_ms is None:
            raise InputError(f"failing run {run.name} has no ground truth")
        start, fail = run.fault_start_ms, run.failure_time_ms
        true_windows += int((stable & (ends <= fail)).sum())
        first = None
        for ev in events:
            if start <= ev.timestamp_ms < fail:
                tp += 1
                if first is None:
                    first = ev.timestamp_ms
            else:
                fp += 1
        phase = (ends > start) & (ends <= fail)
        faulty += int(phase.sum())
        faulty_pos += int((phase & raw).sum())
        lead[run.name] = None if first is None else fail - first
        by_fault.setdefault(run.fault_type, [])
        if first is not None:
            by_fault[run.fault_type].append(fail - first)
    fault_lead = {f: (float(np.mean(v)) if v else None) for f, v in sorted(by_fault.items())}
    return EvalReport(
        window_minutes, past_minutes,
        precision=true_windows / predicted if predicted else None,
        recall=faulty_pos / faulty if faulty else None,
        predicted_windows=predicted, true_windows=true_windows,
        true_events=tp, false_events=fp, faulty_windows=faulty, faulty_positive=faulty_pos,
        normal_windows=normal, normal_stable_windows=normal_stable,
        lead_time_ms=dict(sorted(lead.items())), fault_lead_time_ms=fault_lead,
        model=dict(model or {}),
    )


def fmt_metric(x: float | None) -> str:
    return "undefined" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"
