"""Synthetic KPI generator with a calendar workload and injectable faults.

All numbers here are synthetic constants chosen so that faults lead to
failure within a few hours; they make no claim about any real system.

Time is sampled once per minute from ``start_ms`` (a Monday, 00:00 UTC by
default). The call rate follows::

    rate(t) = base_rate * day_factor(t) * hour_factor(t) + noise,  clipped at 0

and every other KPI is ``base + coupling * rate_true(t) + noise`` where
``rate_true`` is the noise-free rate (after any workload fault).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import write_samples_csv
from .detectors import Sample
from .errors import InputError

MINUTE_MS = 60_000
DAY_MIN = 1440
MONDAY_2024 = 1_704_067_200_000  # 2024-01-01T00:00:00Z
MAX_ACTIVATIONS = 100_000  # effects saturate long before this


def _hour_curve() -> tuple[float, ...]:
    # office-hours bump centred on 14:00, low at night
    return tuple(round(0.06 + 0.94 * math.exp(-(((h - 14) / 4.0) ** 2)), 4) for h in range(24))


HOURLY_CURVE = _hour_curve()


@dataclass(frozen=True)
class KpiDef:
    name: str
    base: float
    coupling: float  # per call/min
    noise_std: float


DEFAULT_KPIS = (
    KpiDef("active_sessions", 5.0, 3.0, 15.0),
    KpiDef("latency_ms", 40.0, 0.02, 1.5),
    KpiDef("rejected_requests", 1.0, 0.002, 0.3),
    KpiDef("sip_register_rate", 5.0, 0.2, 3.0),
    KpiDef("sprout_cpu", 5.0, 0.06, 0.8),
    KpiDef("bono_cpu", 4.0, 0.05, 0.8),
    KpiDef("homestead_cpu", 3.0, 0.03, 0.6),
    KpiDef("homer_cpu", 2.0, 0.01, 0.4),
    KpiDef("ralf_cpu", 2.0, 0.015, 0.4),
    KpiDef("ellis_cpu", 1.5, 0.002, 0.3),
    KpiDef("bono_memory_mb", 1200.0, 0.5, 2.0),
    KpiDef("sprout_memory_mb", 1500.0, 0.8, 3.0),
    KpiDef("homestead_memory_mb", 900.0, 0.3, 2.0),
    KpiDef("sprout_net_rx_kbps", 20.0, 1.2, 6.0),
    KpiDef("sprout_net_tx_kbps", 20.0, 1.1, 6.0),
    KpiDef("bono_net_rx_kbps", 15.0, 1.0, 5.0),
    KpiDef("sprout_retransmits", 0.5, 0.001, 0.2),
    KpiDef("homer_disk_io", 10.0, 0.05, 2.0),
    KpiDef("cassandra_latency_ms", 3.0, 0.004, 0.3),
)
RATE_KPI = "calls_rate"


@dataclass(frozen=True)
class WorkloadProfile:
    kpis: tuple[KpiDef, ...] = DEFAULT_KPIS
    base_rate: float = 600.0  # calls/min at the weekday 14:00 peak
    rate_noise_std: float = 5.0
    weekday_factor: float = 1.0
    weekend_factor: float = 0.35
    hourly: tuple[float, ...] = HOURLY_CURVE
    seed: int = 0
    start_ms: int = MONDAY_2024

    def __post_init__(self):
        if not (self.weekday_factor > 0 and self.weekend_factor > 0):
            raise ValueError("day factors must be > 0")
        if len(self.hourly) != 24:
            raise ValueError("hourly curve needs 24 values")
        if self.rate_noise_std < 0 or any(k.noise_std < 0 for k in self.kpis):
            raise ValueError("noise stddev must be >= 0")

    @property
    def kpi_names(self) -> tuple[str, ...]:
        return (RATE_KPI,) + tuple(k.name for k in self.kpis)


# --------------------------------------------------------------------------
# activation patterns


@dataclass(frozen=True)
class Constant:
    rate: float  # activations per minute

    def times(self, horizon_min: float) -> np.ndarray:
        n = int(math.floor(horizon_min * self.rate))
        return np.arange(1, n + 1) / self.rate


@dataclass(frozen=True)
class Exponential:
    """Activation rate ``rate0 * 2**(t / doubling_min)``."""

    rate0: float
    doubling_min: float

    def times(self, horizon_min: float) -> np.ndarray:
        # k-th activation where the integrated rate reaches k
        c = self.rate0 * self.doubling_min / math.log(2)
        exponent = min(horizon_min / self.doubling_min, 60.0)
        total = min(c * (2 ** exponent - 1), MAX_ACTIVATIONS)
        k = np.arange(1, int(math.floor(total)) + 1)
        return self.doubling_min * np.log2(1 + k / c)


@dataclass(frozen=True)
class Random:
    rate: float
    seed: int = 0

    def times(self, horizon_min: float) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        out = []
        t = 0.0
        while True:
            t += rng.exponential(1 / self.rate)
            if t > horizon_min:
                return np.array(out)
            out.append(t)


Activation = Constant | Exponential | Random
ACTIVATION_NAMES = {Constant: "constant", Exponential: "exponential", Random: "random"}


@dataclass(frozen=True)
class FailureCondition:
    kpi: str
    threshold: float  # failure once kpi >= threshold


FAULT_TYPES = ("memory_leak", "cpu_hog", "packet_loss", "excessive_workload")

# per-activation effect magnitudes and the condition that counts as failure
FAULT_EFFECT = {
    "memory_leak": 40.0,  # MB leaked per activation (bono)
    "cpu_hog": 6.0,  # % CPU taken per hog process (sprout)
    "packet_loss": 0.015,  # loss fraction added per activation (sprout NIC)
    "excessive_workload": 0.1,  # extra load multiplier per activation
}
DEFAULT_FAILURE = {
    "memory_leak": FailureCondition("bono_memory_mb", 4096.0),
    "cpu_hog": FailureCondition("sprout_cpu", 99.0),
    "packet_loss": FailureCondition("rejected_requests", 60.0),
    "excessive_workload": FailureCondition(RATE_KPI, 1500.0),
}
# KPIs that show transient spikes while a fault is active
SYMPTOMS = {
    "memory_leak": ("bono_memory_mb", "bono_cpu", "latency_ms", "active_sessions",
                    "bono_net_rx_kbps", "cassandra_latency_ms"),
    "cpu_hog": ("sprout_cpu", "latency_ms", "homestead_cpu", "sprout_net_tx_kbps",
                "sip_register_rate", "cassandra_latency_ms"),
    "packet_loss": ("rejected_requests", "sprout_retransmits", "latency_ms", "sprout_net_rx_kbps",
                    "sprout_net_tx_kbps", "sip_register_rate"),
    "excessive_workload": (RATE_KPI, "active_sessions", "sprout_net_rx_kbps", "bono_net_rx_kbps",
                           "homer_disk_io", "ralf_cpu"),
}
SPIKE_SIGMAS = (4.0, 8.0)  # spike height range, in units of the KPI's noise std
# per-KPI, per-minute spike probability: base + growth per activation, capped;
# kept sparse because dense spikes inflate a short detector window and hide themselves
SPIKE_P_BASE = 0.03
SPIKE_P_PER_ACTIVATION = 0.004
SPIKE_P_MAX = 0.1


@dataclass(frozen=True)
class FaultSpec:
    fault_type: str
    activation: Activation
    start_ms: int
    failure_condition: FailureCondition | None = None
    magnitude: float | None = None

    def __post_init__(self):
        if self.fault_type not in FAULT_TYPES:
            raise ValueError(f"unknown fault type {self.fault_type!r}")
        rates = [getattr(self.activation, a) for a in ("rate", "rate0") if hasattr(self.activation, a)]
        if any(r <= 0 for r in rates):
            raise ValueError("activation rates must be > 0")
        if self.failure_condition is None:
            object.__setattr__(self, "failure_condition", DEFAULT_FAILURE[self.fault_type])
        if self.magnitude is None:
            object.__setattr__(self, "magnitude", FAULT_EFFECT[self.fault_type])

    @property
    def activation_name(self) -> str:
        return ACTIVATION_NAMES[type(self.activation)]


@dataclass
class SimRun:
    timestamps: np.ndarray  # int64 epoch ms, one per minute
    values: dict[str, np.ndarray]
    profile: WorkloadProfile
    fault: FaultSpec | None = None
    failure_time_ms: int | None = None
    name: str = "run"
    extra: dict = field(default_factory=dict)

    @property
    def kpis(self) -> list[str]:
        return list(self.values)

    def samples(self, kpi: str) -> list[Sample]:
        return [Sample(int(t), kpi, float(v)) for t, v in zip(self.timestamps, self.values[kpi])]

    def iter_samples(self):
        names = self.kpis
        cols = [self.values[k] for k in names]
        for i, t in enumerate(self.timestamps.tolist()):
            for k, col in zip(names, cols):
                yield Sample(t, k, float(col[i]))

    def truncated(self) -> SimRun:
        """Cut the run at the failure sample (inclusive); the system is down afterwards."""
        if self.failure_time_ms is None:
            return self
        n = int(np.searchsorted(self.timestamps, self.failure_time_ms, "right"))
        return replace(self, timestamps=self.timestamps[:n],
                       values={k: v[:n] for k, v in self.values.items()})


# --------------------------------------------------------------------------
# generation


def day_factor(profile: WorkloadProfile, minutes: np.ndarray) -> np.ndarray:
    weekday = (minutes // DAY_MIN) % 7  # start is a Monday
    return np.where(weekday < 5, profile.weekday_factor, profile.weekend_factor)


def hour_factor(profile: WorkloadProfile, minutes: np.ndarray) -> np.ndarray:
    """Hourly values sit at hh:30 and are linearly interpolated, periodically."""
    h = (minutes % DAY_MIN) / 60.0 - 0.5
    lo = np.floor(h).astype(int)
    frac = h - lo
    curve = np.asarray(profile.hourly)
    return curve[lo % 24] * (1 - frac) + curve[(lo + 1) % 24] * frac


def _noise(profile: WorkloadProfile, seed: int, stream: int, n: int, std: float) -> np.ndarray:
    # one independent stream per KPI, so faults never shift another KPI's noise
    rng = np.random.default_rng([seed, stream])
    return rng.normal(0.0, 1.0, n) * std


def _build(profile: WorkloadProfile, n: int, seed: int, fault: FaultSpec | None) -> dict[str, np.ndarray]:
    minutes = np.arange(n)
    rate_true = profile.base_rate * day_factor(profile, minutes) * hour_factor(profile, minutes)
    effect = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    start = n
    if fault is not None:
        start_min = (fault.start_ms - profile.start_ms) / MINUTE_MS
        start = int(math.ceil(start_min))
        times = np.sort(fault.activation.times(n - 1 - start_min) + start_min)
        # activations that happened at or before each sample
        count = np.searchsorted(times, minutes, "right")
        effect = fault.magnitude * count
    if fault is not None and fault.fault_type == "excessive_workload":
        rate_true = rate_true * (1.0 + effect)
    values = {RATE_KPI: np.maximum(
        rate_true + _noise(profile, seed, 0, n, profile.rate_noise_std), 0.0)}
    for i, k in enumerate(profile.kpis, start=1):
        values[k.name] = k.base + k.coupling * rate_true + _noise(profile, seed, i, n, k.noise_std)
    if fault is None:
        pass
    elif fault.fault_type == "memory_leak":
        values["bono_memory_mb"] = values["bono_memory_mb"] + effect
    elif fault.fault_type == "cpu_hog":
        demand = values["sprout_cpu"] + effect
        values["sprout_cpu"] = np.minimum(demand, 100.0)

        def slowdown(cpu):
            return 1 + 3 * np.clip(cpu / 100.0, 0.0, 0.95) ** 4

        # relative to the fault-free load, so samples before the start are untouched
        values["latency_ms"] = values["latency_ms"] * (slowdown(demand) / slowdown(demand - effect))
    elif fault.fault_type == "packet_loss":
        loss = np.minimum(effect, 0.95)
        values["rejected_requests"] = values["rejected_requests"] + rate_true * loss
        values["latency_ms"] = values["latency_ms"] * (1 + 4 * loss)
        values["sprout_retransmits"] = values["sprout_retransmits"] + 0.05 * rate_true * loss
    if fault is not None:
        _add_symptoms(profile, values, fault, seed, start, count)
    for k in profile.kpis:
        if k.name.endswith(("_cpu", "_rate", "_requests", "_sessions", "_retransmits", "_io")):
            values[k.name] = np.maximum(values[k.name], 0.0)
    return values


def _add_symptoms(profile: WorkloadProfile, values: dict[str, np.ndarray], fault: FaultSpec,
                  seed: int, start: int, count: np.ndarray) -> None:
    """Independent transient spikes on each symptom KPI after the fault starts.

    The spike probability grows with the number of activations so far.
    """
    n = len(count)
    rng = np.random.default_rng([seed, 7919, FAULT_TYPES.index(fault.fault_type)])
    noise_std = {k.name: k.noise_std for k in profile.kpis}
    noise_std[RATE_KPI] = profile.rate_noise_std
    p = np.minimum(SPIKE_P_MAX, SPIKE_P_BASE + SPIKE_P_PER_ACTIVATION * count)
    p[:start] = 0.0
    lo, hi = SPIKE_SIGMAS
    for kpi in SYMPTOMS[fault.fault_type]:
        hit = rng.random(n) < p
        heights = rng.uniform(lo, hi, n)
        values[kpi] = values[kpi] + np.where(hit, heights, 0.0) * max(noise_std[kpi], 1e-9)


def generate_normal_run(profile: WorkloadProfile, duration_min: int, seed: int | None = None,
                        name: str = "normal") -> SimRun:
    seed = profile.seed if seed is None else seed
    ts = profile.start_ms + MINUTE_MS * np.arange(duration_min, dtype=np.int64)
    return SimRun(ts, _build(profile, duration_min, seed, None), profile, name=name,
                  extra={"seed": seed})


def inject_fault(run: SimRun, fault: FaultSpec) -> SimRun:
    """Re-generate ``run`` with ``fault`` active from ``fault.start_ms``.

    Samples before the start are identical to the normal run; after it the
    fault's effect accumulates with every activation.
    """
    if fault.start_ms > run.timestamps[-1] or fault.start_ms < run.timestamps[0]:
        raise InputError("fault start must fall within the run")
    seed = run.extra.get("seed", run.profile.seed)
    values = _build(run.profile, len(run.timestamps), seed, fault)
    cond = fault.failure_condition
    hit = np.flatnonzero((values[cond.kpi] >= cond.threshold) & (run.timestamps >= fault.start_ms))
    failure = int(run.timestamps[hit[0]]) if hit.size else None
    return SimRun(run.timestamps, values, run.profile, fault, failure,
                  name=run.name, extra=dict(run.extra))


# --------------------------------------------------------------------------
# emission


def manifest(run: SimRun) -> dict:
    f = run.fault
    return {
        "fault_type": f.fault_type if f else None,
        "activation": f.activation_name if f else None,
        "start_ms": f.start_ms if f else None,
        "failure_time_ms": run.failure_time_ms,
    }


def emit_run(run: SimRun, directory: str | os.PathLike) -> tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    csv_path = d / "samples.csv"
    write_samples_csv(csv_path, run.iter_samples())
    man_path = d / "manifest.json"
    man_path.write_text(json.dumps(manifest(run), indent=2) + "\n", encoding="utf-8")
    return csv_path, man_path


def first_failure_time(samples: Sequence[Sample], cond: FailureCondition, start_ms: int) -> int | None:
    for s in samples:
        if s.kpi == cond.kpi and s.timestamp >= start_ms and s.value >= cond.threshold:
            return s.timestamp
    return None
