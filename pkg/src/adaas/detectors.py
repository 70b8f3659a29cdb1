"""Streaming anomaly detectors: fixed threshold, sigma limit and mean shift.

Every detector is a pure ``step(state, params, sample) -> (state, verdict)``
function over an explicit, immutable state object, so the same code serves
the long-running bridge workers and offline batch evaluation.

Decisions are made with exact semantics on the float inputs: the fast float
computation is trusted only when it is clearly away from the threshold, and
near-ties are settled with rational arithmetic. This makes translation and
scaling invariance hold exactly for exactly representable inputs and lets a
vectorized batch path agree bit-for-bit with the streaming fold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError, RejectedSampleError

# Float results within this relative band of the threshold are re-decided exactly.
_TIE_BAND = 1e-9


@dataclass(frozen=True)
class Sample:
    timestamp: int  # epoch milliseconds
    kpi: str
    value: float


@dataclass(frozen=True)
class FixedThresholdParams:
    threshold: float
    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(frozen=True)
class SigmaLimitParams:
    window_size: int
    sigma: float = 3.0

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")


@dataclass(frozen=True)
class MeanShiftParams:
    """``lam=None`` means the threshold is the population std of the previous window."""

    window_size: int
    lam: float | None = None

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.lam is not None and not self.lam >= 0:
            raise ValueError("lambda must be >= 0")


Params = Union[FixedThresholdParams, SigmaLimitParams, MeanShiftParams]


@dataclass(frozen=True)
class RunState:
    run: int = 0


@dataclass(frozen=True)
class WindowState:
    buffer: tuple[float, ...] = ()


DetectorState = Union[RunState, WindowState]


@dataclass(frozen=True)
class Verdict:
    fired: bool
    score: float
    threshold_used: float
    observed: float


def initial_state(params: Params) -> DetectorState:
    if isinstance(params, FixedThresholdParams):
        return RunState()
    return WindowState()


def _check_value(s: Sample) -> float:
    v = s.value
    if not math.isfinite(v):
        raise RejectedSampleError(f"non-finite value {v!r} for {s.kpi} at {s.timestamp}")
    return float(v)


def _mean_var(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    m = math.fsum(xs) / n
    return m, math.fsum([(x - m) * (x - m) for x in xs]) / n


def _as_ints(xs: Sequence[float]) -> list[int]:
    """Exact integers proportional to ``xs`` (finite floats are m / 2**k)."""
    ratios = [float(x).as_integer_ratio() for x in xs]
    shift = max(d.bit_length() for _, d in ratios)
    return [n << (shift - d.bit_length()) for n, d in ratios]


def _near(a: float, b: float, scale: float) -> bool:
    return abs(a - b) <= _TIE_BAND * scale


# --------------------------------------------------------------------------
# fixed threshold


def _fixed_verdict(run: int, v: float, p: FixedThresholdParams) -> Verdict:
    fired = run >= p.n
    if p.threshold > 0:
        score = max(v / p.threshold, 0.0)
    else:
        score = 1.0 if fired else 0.0
    return Verdict(fired, score, float(p.threshold), v)


def step_fixed_threshold(state: RunState, params: FixedThresholdParams,
                         s: Sample) -> tuple[RunState, Verdict]:
    v = _check_value(s)
    run = state.run + 1 if v >= params.threshold else 0
    return RunState(run), _fixed_verdict(run, v, params)


# --------------------------------------------------------------------------
# sigma limit


def _sigma_verdict(window: Sequence[float], v: float, p: SigmaLimitParams) -> Verdict:
    """Check ``v`` against the mean/std of ``window`` (which excludes ``v``)."""
    lo, hi = min(window), max(window)
    if lo == hi:
        # zero-variance window: the threshold is exactly 0
        return Verdict(v != lo, 0.0, 0.0, v)
    m, var = _mean_var(window)
    thr = p.sigma * math.sqrt(var)
    d = abs(v - m)
    scale = max(abs(v), abs(lo), abs(hi)) * max(1.0, p.sigma)
    if _near(d, thr, scale):
        # d^2 > sigma^2 var, multiplied through by w^2 and the common scale
        *xs, iv = _as_ints(list(window) + [v])
        w = len(xs)
        total = sum(xs)
        sq = sum(x * x for x in xs)
        num, den = float(p.sigma).as_integer_ratio()
        dev = w * iv - total
        fired = den * den * dev * dev > num * num * (w * sq - total * total)
    else:
        fired = d > thr
    score = d / thr if thr > 0 else 0.0
    if fired and thr > 0:
        score = max(score, 1.0)
    return Verdict(fired, score, thr, v)


def step_sigma_limit(state: WindowState, params: SigmaLimitParams,
                     s: Sample) -> tuple[WindowState, Verdict]:
    v = _check_value(s)
    buf = state.buffer
    if len(buf) < params.window_size:
        return WindowState(buf + (v,)), Verdict(False, 0.0, 0.0, v)
    verdict = _sigma_verdict(buf, v, params)
    return WindowState(buf[1:] + (v,)), verdict


# --------------------------------------------------------------------------
# mean shift


def _mean_shift_verdict(prev: Sequence[float], cur: Sequence[float],
                        p: MeanShiftParams) -> Verdict:
    v = cur[-1]
    mp, var_p = _mean_var(prev)
    mc = math.fsum(cur) / len(cur)
    diff = abs(mp - mc)
    if p.lam is None:
        plo, phi = min(prev), max(prev)
        lam = 0.0 if plo == phi else math.sqrt(var_p)
    else:
        lam = float(p.lam)
    scale = max(max(map(abs, prev)), max(map(abs, cur)))
    if _near(diff, lam, max(scale, lam)):
        w = len(prev)
        if p.lam is None:
            ints = _as_ints(list(prev) + list(cur))
            ip, ic = ints[:w], ints[w:]
            sp = sum(ip)
            delta = sp - sum(ic)
            # (delta / w)^2 > var(prev), times w^2
            fired = delta * delta > w * sum(x * x for x in ip) - sp * sp
        else:
            *ints, il = _as_ints(list(prev) + list(cur) + [float(p.lam)])
            delta = sum(ints[:w]) - sum(ints[w:])
            fired = delta * delta > il * il * w * w
    else:
        fired = diff > lam
    score = diff / lam if lam > 0 else 0.0
    if fired and lam > 0:
        score = max(score, 1.0)
    return Verdict(fired, score, lam, v)


def step_mean_shift(state: WindowState, params: MeanShiftParams,
                    s: Sample) -> tuple[WindowState, Verdict]:
    v = _check_value(s)
    w = params.window_size
    buf = state.buffer + (v,)
    if len(buf) > 2 * w:
        buf = buf[1:]
    if len(buf) < 2 * w:
        return WindowState(buf), Verdict(False, 0.0, 0.0, v)
    return WindowState(buf), _mean_shift_verdict(buf[:w], buf[w:], params)


# --------------------------------------------------------------------------
# dispatch + batch


def step(state: DetectorState, params: Params, s: Sample) -> tuple[DetectorState, Verdict]:
    if isinstance(params, FixedThresholdParams):
        return step_fixed_threshold(state, params, s)
    if isinstance(params, SigmaLimitParams):
        return step_sigma_limit(state, params, s)
    if isinstance(params, MeanShiftParams):
        return step_mean_shift(state, params, s)
    raise TypeError(f"unsupported params type {type(params).__name__}")


def _check_series(series: Sequence[Sample]) -> np.ndarray:
    prev = None
    for i, s in enumerate(series):
        if prev is not None and s.timestamp <= prev:
            raise InputError(f"timestamps not strictly increasing at index {i}")
        prev = s.timestamp
    values = np.array([s.value for s in series], dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        s = series[int(bad[0])]
        raise RejectedSampleError(f"non-finite value {s.value!r} for {s.kpi} at {s.timestamp}")
    return values


def run_stream(params: Params, series: Sequence[Sample]) -> list[tuple[int, Verdict]]:
    """Fold the step function over ``series`` and keep the fired verdicts."""
    state = initial_state(params)
    out = []
    for i, s in enumerate(series):
        state, verdict = step(state, params, s)
        if verdict.fired:
            out.append((i, verdict))
    return out


def detect_batch(params: Params, series: Sequence[Sample]) -> list[tuple[int, Verdict]]:
    """Fired verdicts over a whole series, equal to :func:`run_stream`.

    Window detectors use a vectorized pass to discard samples that are
    clearly below threshold; every remaining candidate is decided by the
    same scalar routine the streaming step uses.
    """
    x = _check_series(series)
    if isinstance(params, FixedThresholdParams):
        return _batch_fixed(params, x)
    if isinstance(params, SigmaLimitParams):
        return _batch_sigma(params, x)
    if isinstance(params, MeanShiftParams):
        return _batch_mean_shift(params, x)
    raise TypeError(f"unsupported params type {type(params).__name__}")


def _batch_fixed(p: FixedThresholdParams, x: np.ndarray) -> list[tuple[int, Verdict]]:
    above = x >= p.threshold
    # length of the run of above-threshold values ending at each index
    idx = np.arange(len(x))
    last_below = np.maximum.accumulate(np.where(above, -1, idx))
    run = idx - last_below
    return [(int(i), _fixed_verdict(int(run[i]), float(x[i]), p)) for i in np.flatnonzero(run >= p.n)]


def _batch_sigma(p: SigmaLimitParams, x: np.ndarray) -> list[tuple[int, Verdict]]:
    w = p.window_size
    if len(x) <= w:
        return []
    win = sliding_window_view(x[:-1], w)
    v = x[w:]
    lo, hi = win.min(axis=1), win.max(axis=1)
    m = win.mean(axis=1)
    thr = p.sigma * np.sqrt(((win - m[:, None]) ** 2).mean(axis=1))
    d = np.abs(v - m)
    scale = np.maximum(np.abs(v), np.maximum(np.abs(lo), np.abs(hi))) * max(1.0, p.sigma)
    # constant windows are decided exactly: fire iff the value differs
    candidates = np.flatnonzero(np.where(lo == hi, v != lo, d > thr - 10 * _TIE_BAND * scale))
    out = []
    for j in candidates:
        verdict = _sigma_verdict(tuple(win[j].tolist()), float(v[j]), p)
        if verdict.fired:
            out.append((int(j) + w, verdict))
    return out


def _batch_mean_shift(p: MeanShiftParams, x: np.ndarray) -> list[tuple[int, Verdict]]:
    w = p.window_size
    if len(x) < 2 * w:
        return []
    full = sliding_window_view(x, 2 * w)
    prev, cur = full[:, :w], full[:, w:]
    mp = prev.mean(axis=1)
    diff = np.abs(mp - cur.mean(axis=1))
    if p.lam is None:
        lam = np.sqrt(((prev - mp[:, None]) ** 2).mean(axis=1))
    else:
        lam = np.full(len(diff), float(p.lam))
    scale = np.maximum(np.abs(full).max(axis=1), lam)
    maybe = diff > lam - 10 * _TIE_BAND * scale
    if p.lam is None:
        # a constant previous window followed by the same constant never fires
        same = (full.min(axis=1) == full.max(axis=1))
        maybe &= ~same
    candidates = np.flatnonzero(maybe)
    out = []
    for j in candidates:
        row = full[j].tolist()
        verdict = _mean_shift_verdict(row[:w], row[w:], p)
        if verdict.fired:
            out.append((int(j) + 2 * w - 1, verdict))
    return out
