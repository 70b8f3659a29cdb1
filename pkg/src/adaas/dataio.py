"""Data handlers: sample sources, anomaly sinks and the common record format.

Sources expose one pull method, ``fetch(since)``, returning the samples with
timestamps strictly greater than ``since``. Offline sources (CSV files) set
``exhausted`` once every row has been handed out.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import threading
import urllib.error
import urllib.parse
import urllib.request
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

from .detectors import Sample
from .errors import (
    InputError,
    MalformedPayloadError,
    MalformedRowError,
    SinkError,
    SourceNotFoundError,
    TransientSourceError,
)

log = logging.getLogger(__name__)

SAMPLE_HEADER = ("timestamp_ms", "kpi", "value")
ANOMALY_KEYS = ("ts_ms", "detector_id", "kpi", "analysis", "observed", "threshold", "score")

SOURCE_KINDS = ("csv", "http", "bus")
SINK_KINDS = ("csv", "jsonl", "bus")


@dataclass(frozen=True)
class SourceSpec:
    """Where a detector reads its KPI from.

    ``kind`` selects the handler: ``csv`` needs ``path``, ``http`` needs
    ``url``, ``bus`` needs ``topic``. The KPI filter comes from the detector.
    """

    kind: str
    path: str | None = None
    url: str | None = None
    topic: str | None = None
    poll_interval_s: float = 60.0
    sampling_interval_s: float = 60.0

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise InputError(f"unknown source kind {self.kind!r}")
        needed = {"csv": "path", "http": "url", "bus": "topic"}[self.kind]
        if not getattr(self, needed):
            raise InputError(f"{self.kind} source requires {needed!r}")
        if not (self.poll_interval_s > 0 and self.sampling_interval_s > 0):
            raise InputError("poll/sampling intervals must be > 0")

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SourceSpec:
        try:
            return cls(**d)
        except TypeError as e:
            raise InputError(f"bad source spec: {e}") from None


@dataclass(frozen=True)
class SinkSpec:
    kind: str
    path: str | None = None
    topic: str | None = None

    def __post_init__(self):
        if self.kind not in SINK_KINDS:
            raise InputError(f"unknown sink kind {self.kind!r}")
        needed = "topic" if self.kind == "bus" else "path"
        if not getattr(self, needed):
            raise InputError(f"{self.kind} sink requires {needed!r}")

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SinkSpec:
        try:
            return cls(**d)
        except TypeError as e:
            raise InputError(f"bad sink spec: {e}") from None


@dataclass(frozen=True)
class AnomalyRecord:
    timestamp_ms: int
    detector_id: str
    kpi: str
    analysis: str
    observed: float
    threshold: float
    score: float

    def __post_init__(self):
        if not self.detector_id:
            raise InputError("detector_id must be non-empty")
        if not self.score >= 0:
            raise InputError("score must be >= 0")

    def to_json(self) -> str:
        """Serialize to the canonical single-line form (no trailing newline)."""
        obj = {
            "ts_ms": int(self.timestamp_ms),
            "detector_id": self.detector_id,
            "kpi": self.kpi,
            "analysis": self.analysis,
            "observed": float(self.observed),
            "threshold": float(self.threshold),
            "score": float(self.score),
        }
        # float repr is the shortest string that round-trips
        return json.dumps(obj, separators=(",", ":"), allow_nan=False, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> AnomalyRecord:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedPayloadError(f"bad anomaly line: {e}") from None
        if not isinstance(obj, dict) or tuple(obj) != ANOMALY_KEYS:
            raise MalformedPayloadError(f"anomaly keys must be {ANOMALY_KEYS}")
        return cls(obj["ts_ms"], obj["detector_id"], obj["kpi"], obj["analysis"],
                   float(obj["observed"]), float(obj["threshold"]), float(obj["score"]))


# --------------------------------------------------------------------------
# sample CSV


def format_value(v: float) -> str:
    return repr(float(v))


def write_samples_csv(path: str | os.PathLike, samples: Iterable[Sample]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(SAMPLE_HEADER) + "\n")
        for s in samples:
            f.write(f"{int(s.timestamp)},{s.kpi},{format_value(s.value)}\n")


def _parse_rows(f: io.TextIOBase, kpi: str | None) -> Iterator[Sample]:
    reader = csv.reader(f)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != SAMPLE_HEADER:
        raise MalformedRowError(1, f"header must be {','.join(SAMPLE_HEADER)}")
    last: dict[str, int] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise MalformedRowError(lineno, f"expected 3 fields, got {len(row)}")
        ts_s, name, val_s = row
        try:
            ts = int(ts_s)
            value = float(val_s)
        except ValueError:
            raise MalformedRowError(lineno, f"cannot parse {row!r}") from None
        if not math.isfinite(value):
            raise MalformedRowError(lineno, f"non-finite value {val_s!r}")
        if name in last and ts <= last[name]:
            raise MalformedRowError(lineno, f"timestamp {ts} not increasing for {name}")
        last[name] = ts
        if kpi is None or name == kpi:
            yield Sample(ts, name, value)


def read_csv_samples(path: str | os.PathLike, kpi: str | None = None) -> Iterator[Sample]:
    """Yield samples from a canonical sample CSV in file order.

    Raises SourceNotFoundError for a missing file and MalformedRowError
    (carrying the 1-based line number) for a bad header or row.
    """
    if not os.path.isfile(path):
        raise SourceNotFoundError(f"source not found: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        yield from _parse_rows(f, kpi)


def load_series(path: str | os.PathLike) -> dict[str, list[Sample]]:
    series: dict[str, list[Sample]] = defaultdict(list)
    for s in read_csv_samples(path):
        series[s.kpi].append(s)
    return dict(series)


# --------------------------------------------------------------------------
# in-process bus


class Bus:
    """Append-only topic log; every reader keeps its own offset.

    Many producers and consumers may share a topic; entries from one producer
    keep their publication order.
    """

    def __init__(self):
        self._topics: dict[str, list[str]] = defaultdict(list)
        self._cond = threading.Condition()

    def publish(self, topic: str, line: str) -> None:
        with self._cond:
            self._topics[topic].append(line)
            self._cond.notify_all()

    def read(self, topic: str, offset: int, timeout: float | None = None) -> list[str]:
        with self._cond:
            if timeout and len(self._topics[topic]) <= offset:
                self._cond.wait(timeout)
            return self._topics[topic][offset:]


DEFAULT_BUS = Bus()


# --------------------------------------------------------------------------
# sources


class CsvSource:
    """Offline replay of a sample CSV on logical (timestamp) time."""

    def __init__(self, path: str, kpi: str, batch_size: int = 1000):
        if not os.path.isfile(path):
            raise SourceNotFoundError(f"source not found: {path}")
        self._it = read_csv_samples(path, kpi)
        self.batch_size = batch_size
        self.exhausted = False
        self.offline = True

    def fetch(self, since: int | None) -> list[Sample]:
        out: list[Sample] = []
        for s in self._it:
            if since is None or s.timestamp > since:
                out.append(s)
                if len(out) >= self.batch_size:
                    return out
        self.exhausted = True
        return out


def poll_http_source(base_url: str, kpi: str, since: int, timeout: float = 10.0) -> list[Sample]:
    """GET ``{base}/series?kpi=NAME&from=MS``; ``since`` is an exclusive bound."""
    query = urllib.parse.urlencode({"kpi": kpi, "from": int(since)})
    url = f"{base_url.rstrip('/')}/series?{query}"
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            body = resp.read()
    except urllib.error.HTTPError as e:
        if e.code >= 500:
            raise TransientSourceError(f"{url}: HTTP {e.code}") from None
        raise MalformedPayloadError(f"{url}: HTTP {e.code}") from None
    except (urllib.error.URLError, OSError) as e:
        raise TransientSourceError(f"{url}: {e}") from None
    try:
        points = json.loads(body)
    except json.JSONDecodeError as e:
        raise MalformedPayloadError(f"{url}: {e}") from None
    if not isinstance(points, list):
        raise MalformedPayloadError(f"{url}: expected a JSON array")
    out = []
    last = since
    for p in points:
        if not (isinstance(p, list) and len(p) == 2 and isinstance(p[0], int)
                and isinstance(p[1], (int, float)) and not isinstance(p[1], bool)):
            raise MalformedPayloadError(f"{url}: bad point {p!r}")
        ts, value = p
        if ts <= last:
            raise MalformedPayloadError(f"{url}: timestamps must be ascending and > from")
        last = ts
        out.append(Sample(ts, kpi, float(value)))
    return out


class HttpPollSource:
    def __init__(self, url: str, kpi: str):
        self.url = url
        self.kpi = kpi
        self.exhausted = False
        self.offline = False

    def fetch(self, since: int | None) -> list[Sample]:
        return poll_http_source(self.url, self.kpi, -1 if since is None else since)


def record_to_sample(rec: AnomalyRecord) -> Sample:
    """Anomaly stream entries feed downstream detectors with their score."""
    return Sample(rec.timestamp_ms, rec.kpi, rec.score)


class BusSource:
    """Reads a bus topic carrying anomaly records or sample lines."""

    def __init__(self, topic: str, kpi: str | None, bus: Bus | None = None):
        self.topic = topic
        self.kpi = kpi
        self.bus = bus or DEFAULT_BUS
        self.offset = 0
        self.exhausted = False
        self.offline = False

    def read_records(self) -> list[AnomalyRecord]:
        lines = self.bus.read(self.topic, self.offset)
        self.offset += len(lines)
        return [AnomalyRecord.from_json(line) for line in lines]

    def fetch(self, since: int | None) -> list[Sample]:
        out = []
        for rec in self.read_records():
            if self.kpi is not None and rec.kpi != self.kpi:
                continue
            if since is None or rec.timestamp_ms > since:
                out.append(record_to_sample(rec))
        return out


def open_source(spec: SourceSpec, kpi: str, bus: Bus | None = None):
    if spec.kind == "csv":
        return CsvSource(spec.path, kpi)
    if spec.kind == "http":
        return HttpPollSource(spec.url, kpi)
    return BusSource(spec.topic, kpi, bus)


# --------------------------------------------------------------------------
# sinks


class JsonLinesSink:
    """Appends one canonical JSON line per record.

    Each record goes out in a single ``write`` on an ``O_APPEND`` descriptor
    under a lock, so concurrent writers never interleave partial lines.
    """

    _locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    def __init__(self, path: str):
        self.path = os.path.abspath(path)
        try:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            self._fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
        except OSError as e:
            raise SinkError(f"cannot open {path}: {e}") from None
        self._lock = self._locks[self.path]

    def write(self, rec: AnomalyRecord) -> None:
        self._write_line(rec.to_json())

    def _write_line(self, line: str) -> None:
        data = (line + "\n").encode("utf-8")
        try:
            with self._lock:
                os.write(self._fd, data)
        except OSError as e:
            raise SinkError(f"write to {self.path} failed: {e}") from None

    def flush(self) -> None:
        try:
            os.fsync(self._fd)
        except OSError:
            pass

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


class CsvAnomalySink(JsonLinesSink):
    """Same record fields as the JSON-lines format, as CSV columns."""

    def __init__(self, path: str):
        super().__init__(path)
        with self._lock:
            if os.fstat(self._fd).st_size == 0:
                os.write(self._fd, (",".join(ANOMALY_KEYS) + "\n").encode())

    def write(self, rec: AnomalyRecord) -> None:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow([
            int(rec.timestamp_ms), rec.detector_id, rec.kpi, rec.analysis,
            format_value(rec.observed), format_value(rec.threshold), format_value(rec.score),
        ])
        self._write_line(buf.getvalue())


class BusSink:
    def __init__(self, topic: str, bus: Bus | None = None):
        self.topic = topic
        self.bus = bus or DEFAULT_BUS

    def write(self, rec: AnomalyRecord) -> None:
        self.bus.publish(self.topic, rec.to_json())

    def flush(self) -> None:
        pass

    def close(self) -> None:
        pass


def open_sink(spec: SinkSpec, bus: Bus | None = None):
    if spec.kind == "jsonl":
        return JsonLinesSink(spec.path)
    if spec.kind == "csv":
        return CsvAnomalySink(spec.path)
    return BusSink(spec.topic, bus)


def write_anomaly(sink, rec: AnomalyRecord) -> bool:
    sink.write(rec)
    return True


def read_anomalies(path: str | os.PathLike) -> list[AnomalyRecord]:
    with open(path, encoding="utf-8") as f:
        return [AnomalyRecord.from_json(line) for line in f if line.strip()]
