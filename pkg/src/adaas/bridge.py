"""The bridge: runs each deployed detector in its own supervised worker.

The only backend here is in-process threads. The server talks to the bridge
through ``deploy``/``undeploy``/``list_instances``/``status``, so a container
backend could replace it without touching the server.
"""

from __future__ import annotations

import enum
import logging
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

from .dataio import Bus, open_sink, open_source
from .detectors import initial_state, step
from .errors import (
    DuplicateDetectorError,
    RejectedSampleError,
    SourceNotFoundError,
    TransientSourceError,
    UnknownDetectorError,
)
from .registry import Registry
from .specs import DetectorSpec

log = logging.getLogger(__name__)

DEFAULT_BACKOFF = (1.0, 2.0, 4.0)


class Lifecycle(str, enum.Enum):
    PENDING = "Pending"
    RUNNING = "Running"
    FAILED = "Failed"
    STOPPED = "Stopped"


_ALLOWED = {
    Lifecycle.PENDING: {Lifecycle.RUNNING, Lifecycle.FAILED, Lifecycle.STOPPED},
    Lifecycle.RUNNING: {Lifecycle.FAILED, Lifecycle.STOPPED},
    Lifecycle.FAILED: set(),
    Lifecycle.STOPPED: set(),
}


@dataclass(frozen=True)
class DetectorInstance:
    spec: DetectorSpec
    state: Lifecycle
    started_at: int
    samples_processed: int = 0
    anomalies_fired: int = 0
    samples_rejected: int = 0
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            **self.spec.to_dict(),
            "state": self.state.value,
            "reason": self.reason,
            "started_at": self.started_at,
            "samples_processed": self.samples_processed,
            "anomalies_fired": self.anomalies_fired,
            "samples_rejected": self.samples_rejected,
        }


class BridgeAPI(Protocol):
    def deploy(self, spec: DetectorSpec) -> str: ...
    def undeploy(self, detector_id: str) -> None: ...
    def list_instances(self) -> list[DetectorInstance]: ...
    def status(self, detector_id: str) -> DetectorInstance: ...


class _Worker:
    def __init__(self, bridge: InProcessBridge, spec: DetectorSpec):
        self.bridge = bridge
        self.spec = spec
        self.stop = threading.Event()
        self.thread = threading.Thread(target=self._run, name=f"detector-{spec.detector_id}",
                                       daemon=True)
        self._snap = DetectorInstance(spec, Lifecycle.PENDING, int(time.time() * 1000))
        self._lock = threading.Lock()

    # snapshots are immutable; readers never block the worker for long
    @property
    def snapshot(self) -> DetectorInstance:
        return self._snap

    def _set(self, **changes) -> None:
        with self._lock:
            new_state = changes.get("state")
            if new_state is not None and new_state is not self._snap.state:
                if new_state not in _ALLOWED[self._snap.state]:
                    return
            self._snap = replace(self._snap, **changes)

    def _bump(self, processed: int, fired: int, rejected: int) -> None:
        with self._lock:
            s = self._snap
            self._snap = replace(s, samples_processed=s.samples_processed + processed,
                                 anomalies_fired=s.anomalies_fired + fired,
                                 samples_rejected=s.samples_rejected + rejected)

    def _run(self) -> None:
        try:
            self._loop()
        except Exception as e:  # supervisor boundary: any crash marks the instance Failed
            log.exception("detector %s crashed", self.spec.detector_id)
            self._set(state=Lifecycle.FAILED, reason=f"{type(e).__name__}: {e}")

    def _loop(self) -> None:
        spec = self.spec
        params = spec.build_params(self.bridge.registry)
        try:
            source = self.bridge.source_factory(spec)
        except SourceNotFoundError:
            self._set(state=Lifecycle.FAILED, reason="source not found")
            return
        sink = open_sink(spec.sink, self.bridge.bus)
        self._set(state=Lifecycle.RUNNING)
        state = initial_state(params)
        since = None
        retries = 0
        backoff = self.bridge.backoff
        try:
            while not self.stop.is_set():
                try:
                    batch = source.fetch(since)
                    retries = 0
                except TransientSourceError as e:
                    if retries >= len(backoff):
                        self._set(state=Lifecycle.FAILED,
                                  reason=f"source failed after {retries} retries: {e}")
                        return
                    log.warning("detector %s: %s; retrying", spec.detector_id, e)
                    self.stop.wait(backoff[retries])
                    retries += 1
                    continue
                processed = fired = rejected = 0
                for s in batch:
                    if self.stop.is_set():
                        break
                    try:
                        state, verdict = step(state, params, s)
                    except RejectedSampleError as e:
                        log.warning("detector %s: %s", spec.detector_id, e)
                        rejected += 1
                        since = s.timestamp
                        continue
                    if verdict.fired:
                        sink.write(spec.record(s, verdict))
                        fired += 1
                    processed += 1
                    since = s.timestamp
                    if processed % 256 == 0:
                        self._bump(processed, fired, rejected)
                        processed = fired = rejected = 0
                self._bump(processed, fired, rejected)
                if batch and source.offline:
                    continue
                if source.exhausted:
                    self.stop.wait(self.bridge.idle_interval)
                else:
                    self.stop.wait(spec.source.sampling_interval_s)
        finally:
            sink.flush()
            sink.close()


class InProcessBridge:
    """Thread-backed bridge; one worker per detector instance.

    ``source_factory`` builds the source for a spec and is the seam for
    injecting flaky or crashing sources in tests.
    """

    def __init__(self, registry: Registry | None = None, backoff: Sequence[float] = DEFAULT_BACKOFF,
                 bus: Bus | None = None, idle_interval: float = 0.5,
                 source_factory: Callable[[DetectorSpec], object] | None = None):
        self.registry = registry or Registry()
        self.backoff = tuple(backoff)
        self.bus = bus
        self.idle_interval = idle_interval
        self.source_factory = source_factory or (lambda spec: open_source(spec.source, spec.kpi, self.bus))
        self._workers: dict[str, _Worker] = {}
        self._lock = threading.Lock()

    def deploy(self, spec: DetectorSpec) -> str:
        with self._lock:
            if spec.detector_id in self._workers:
                raise DuplicateDetectorError(f"detector {spec.detector_id} already deployed")
            worker = _Worker(self, spec)
            self._workers[spec.detector_id] = worker
        worker.thread.start()
        return spec.detector_id

    def undeploy(self, detector_id: str, timeout: float = 30.0) -> None:
        with self._lock:
            worker = self._workers.get(detector_id)
            if worker is None:
                raise UnknownDetectorError(detector_id)
        worker.stop.set()
        worker.thread.join(timeout)
        worker._set(state=Lifecycle.STOPPED)
        with self._lock:
            self._workers.pop(detector_id, None)

    def list_instances(self) -> list[DetectorInstance]:
        with self._lock:
            workers = list(self._workers.values())
        return [w.snapshot for w in workers]

    def status(self, detector_id: str) -> DetectorInstance:
        worker = self._workers.get(detector_id)
        if worker is None:
            raise UnknownDetectorError(detector_id)
        return worker.snapshot

    def wait_until(self, detector_id: str, predicate: Callable[[DetectorInstance], bool],
                   timeout: float = 5.0, interval: float = 0.01) -> DetectorInstance:
        """Poll ``status`` until ``predicate`` holds; returns the last snapshot."""
        deadline = time.monotonic() + timeout
        snap = self.status(detector_id)
        while not predicate(snap) and time.monotonic() < deadline:
            time.sleep(interval)
            snap = self.status(detector_id)
        return snap

    def shutdown(self) -> None:
        for inst in self.list_instances():
            try:
                self.undeploy(inst.spec.detector_id)
            except UnknownDetectorError:
                pass
