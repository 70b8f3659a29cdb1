"""The control server: declarative desired state reconciled against the bridge.

All mutations go through one reconciler thread fed by a command queue, so
requests are applied strictly one at a time. Status reads bypass the queue.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import re
import tempfile
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .bridge import BridgeAPI, DetectorInstance, Lifecycle
from .dataio import SinkSpec, SourceSpec
from .errors import (
    AdaasError,
    BridgeUnavailableError,
    InputError,
    UnknownAnalysisError,
    UnknownDetectorError,
    ValidationError,
)
from .registry import Registry
from .specs import ChangeSet, DetectionRequest, DetectorSpec, compute_changeset, expand_request

log = logging.getLogger(__name__)


@dataclass
class ServerConfig:
    listen: str = "127.0.0.1:8080"
    state_file: str | None = None
    default_source: SourceSpec | None = None
    default_sink: SinkSpec | None = None
    status_poll_interval: float = 1.0

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ServerConfig:
        known = {"listen", "state_file", "default_source", "default_sink", "status_poll_interval"}
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown config keys: {', '.join(sorted(extra))}")
        return cls(
            listen=d.get("listen", "127.0.0.1:8080"),
            state_file=d.get("state_file"),
            default_source=SourceSpec.from_dict(d["default_source"]) if d.get("default_source") else None,
            default_sink=SinkSpec.from_dict(d["default_sink"]) if d.get("default_sink") else None,
            status_poll_interval=float(d.get("status_poll_interval", 1.0)),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> ServerConfig:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass
class ApplyResult:
    changeset: ChangeSet
    outcomes: dict[str, str | None] = field(default_factory=dict)  # id -> None (ok) or error

    @property
    def ok(self) -> bool:
        return all(err is None for err in self.outcomes.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.changeset.to_dict(),
            "outcomes": {i: {"ok": e is None, "error": e} for i, e in self.outcomes.items()},
        }


def parse_desired_state(doc: Any, registry: Registry, config: ServerConfig) -> list[DetectorSpec]:
    """Turn a desired-state document into detector specs.

    The document is ``{"requests": [...], "detectors": [...]}``; requests are
    expanded one detector per KPI, detectors are explicit specs.
    """
    if not isinstance(doc, Mapping):
        raise InputError("desired state must be a JSON object")
    extra = set(doc) - {"requests", "detectors"}
    if extra:
        raise InputError(f"unknown desired-state keys: {', '.join(sorted(extra))}")
    specs: dict[str, DetectorSpec] = {}
    for raw in doc.get("requests", []):
        req = DetectionRequest.from_dict(raw)
        for s in expand_request(req, registry, config.default_source, config.default_sink):
            specs[s.detector_id] = s
    for raw in doc.get("detectors", []):
        if not isinstance(raw, Mapping):
            raise InputError("detector entries must be objects")
        meta = registry.resolve(raw.get("analysis", ""))
        normalized = registry.validate_params(meta, raw.get("params", {}))
        s = DetectorSpec.from_dict({**raw, "params": normalized, "detector_id": ""})
        specs[s.detector_id] = s
    return list(specs.values())


class ControlServer:
    def __init__(self, bridge: BridgeAPI, registry: Registry | None = None,
                 config: ServerConfig | None = None, deploy_wait: float = 2.0):
        self.bridge = bridge
        self.registry = registry or Registry()
        self.config = config or ServerConfig()
        self.deploy_wait = deploy_wait
        self._desired: dict[str, DetectorSpec] = {}
        self._errors: dict[str, str] = {}
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._reconcile_loop, name="reconciler", daemon=True)
        self._thread.start()
        if self.config.state_file and os.path.exists(self.config.state_file):
            self._load_state()

    # --- command bus -----------------------------------------------------

    def _reconcile_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            fn, fut = item
            if not fut.set_running_or_notify_cancel():
                continue
            try:
                fut.set_result(fn())
            except BaseException as e:
                fut.set_exception(e)

    def _submit(self, fn: Callable[[], Any]) -> Any:
        fut: Future = Future()
        self._queue.put((fn, fut))
        return fut.result()

    def close(self) -> None:
        self._queue.put(None)
        self._thread.join(5)

    # --- persistence -----------------------------------------------------

    def _load_state(self) -> None:
        with open(self.config.state_file, encoding="utf-8") as f:
            doc = json.load(f)
        specs = [DetectorSpec.from_dict(d) for d in doc.get("detectors", [])]
        log.info("reloaded %d desired detectors from %s", len(specs), self.config.state_file)
        try:
            self.apply_desired_state(specs)
        except BridgeUnavailableError:
            log.exception("initial reconciliation failed")

    def _save_state(self) -> None:
        path = self.config.state_file
        if not path:
            return
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        doc = {"detectors": [s.to_dict() for s in self._desired.values()]}
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
        os.replace(tmp, path)

    # --- operations ------------------------------------------------------

    def expand_request(self, req: DetectionRequest) -> list[DetectorSpec]:
        return expand_request(req, self.registry, self.config.default_source, self.config.default_sink)

    def desired_state(self) -> list[DetectorSpec]:
        return list(self._desired.values())

    def _actual(self) -> list[DetectorSpec]:
        try:
            return [inst.spec for inst in self.bridge.list_instances()]
        except Exception as e:
            raise BridgeUnavailableError(f"bridge unavailable: {e}") from e

    def _apply(self, desired: Iterable[DetectorSpec]) -> ApplyResult:
        desired = {s.detector_id: s for s in desired}
        cs = compute_changeset(desired.values(), self._actual())
        self._desired = desired
        self._save_state()
        result = ApplyResult(cs)
        # undeploys first to bound peak resource usage
        for did in cs.to_undeploy:
            try:
                self.bridge.undeploy(did)
                result.outcomes[did] = None
            except UnknownDetectorError:
                result.outcomes[did] = None
            except Exception as e:
                result.outcomes[did] = f"undeploy failed: {e}"
        for spec in cs.to_deploy:
            did = spec.detector_id
            try:
                self.bridge.deploy(spec)
            except Exception as e:
                result.outcomes[did] = f"deploy failed: {e}"
                self._errors[did] = result.outcomes[did]
                continue
            snap = self._await_started(did)
            if snap is not None and snap.state is Lifecycle.FAILED:
                result.outcomes[did] = snap.reason or "failed"
            else:
                result.outcomes[did] = None
                self._errors.pop(did, None)
        return result

    def _await_started(self, did: str) -> DetectorInstance | None:
        deadline = time.monotonic() + self.deploy_wait
        while True:
            try:
                snap = self.bridge.status(did)
            except Exception:
                return None
            if snap.state is not Lifecycle.PENDING or time.monotonic() >= deadline:
                return snap
            time.sleep(0.005)

    def apply_desired_state(self, desired: Iterable[DetectorSpec]) -> ApplyResult:
        desired = list(desired)
        return self._submit(lambda: self._apply(desired))

    def add_request(self, req: DetectionRequest) -> tuple[list[str], ApplyResult]:
        """Incremental add: read-modify-write of the desired state."""
        specs = self.expand_request(req)

        def run():
            merged = dict(self._desired)
            merged.update((s.detector_id, s) for s in specs)
            return self._apply(merged.values())

        return [s.detector_id for s in specs], self._submit(run)

    def delete_detector(self, detector_id: str) -> ApplyResult:
        def run():
            if detector_id not in self._desired:
                raise UnknownDetectorError(detector_id)
            remaining = {k: v for k, v in self._desired.items() if k != detector_id}
            return self._apply(remaining.values())

        return self._submit(run)

    def get_deployment_status(self) -> list[tuple[DetectorSpec, DetectorInstance | None, str]]:
        """Bridge instances plus desired detectors the bridge does not have.

        Each entry is ``(spec, instance or None, state)``; desired detectors
        whose deploy was rejected read as Failed.
        """
        try:
            instances = self.bridge.list_instances()
        except Exception as e:
            raise BridgeUnavailableError(f"bridge unavailable: {e}") from e
        out = [(i.spec, i, i.state.value) for i in instances]
        present = {i.spec.detector_id for i in instances}
        for did, spec in list(self._desired.items()):
            if did not in present:
                out.append((spec, None, Lifecycle.FAILED.value))
        return out

    def status_dicts(self) -> list[dict[str, Any]]:
        rows = []
        for spec, inst, state in self.get_deployment_status():
            if inst is not None:
                rows.append(inst.to_dict())
            else:
                rows.append({**spec.to_dict(), "state": state,
                             "reason": self._errors.get(spec.detector_id, "not deployed")})
        return rows


# --------------------------------------------------------------------------
# HTTP API


def _error_status(e: Exception) -> HTTPStatus:
    if isinstance(e, (UnknownDetectorError,)):
        return HTTPStatus.NOT_FOUND
    if isinstance(e, BridgeUnavailableError):
        return HTTPStatus.SERVICE_UNAVAILABLE
    if isinstance(e, (InputError, ValidationError, UnknownAnalysisError, AdaasError)):
        return HTTPStatus.BAD_REQUEST
    return HTTPStatus.INTERNAL_SERVER_ERROR


class _Handler(BaseHTTPRequestHandler):
    server_version = "adaas"
    control: ControlServer  # set on the subclass built by make_http_server

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: Any) -> None:
        data = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> Any:
        n = int(self.headers.get("Content-Length") or 0)
        try:
            return json.loads(self.rfile.read(n) or b"null")
        except json.JSONDecodeError as e:
            raise InputError(f"invalid JSON body: {e}") from None

    def _dispatch(self, method: str) -> None:
        path = self.path.split("?", 1)[0].rstrip("/") or "/"
        c = self.control
        try:
            if method == "GET" and path == "/health":
                self._send(200, {"status": "ok"})
            elif method == "GET" and path == "/analyses":
                self._send(200, [m.to_dict() for m in c.registry])
            elif method == "GET" and path == "/detectors":
                self._send(200, c.status_dicts())
            elif method == "POST" and path == "/desired-state":
                specs = parse_desired_state(self._body(), c.registry, c.config)
                self._send(200, c.apply_desired_state(specs).to_dict())
            elif method == "POST" and path == "/requests":
                ids, result = c.add_request(DetectionRequest.from_dict(self._body()))
                self._send(200, {"created": ids, **result.to_dict()})
            elif method == "DELETE" and (m := re.fullmatch(r"/detectors/([^/]+)", path)):
                self._send(200, c.delete_detector(m.group(1)).to_dict())
            else:
                self._send(404, {"error": f"no route for {method} {path}"})
        except Exception as e:
            status = _error_status(e)
            if status == HTTPStatus.INTERNAL_SERVER_ERROR:
                log.exception("request failed")
            self._send(status, {"error": str(e)})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_DELETE(self):
        self._dispatch("DELETE")


def make_http_server(control: ControlServer, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"control": control})
    httpd = ThreadingHTTPServer((host, port), handler)
    httpd.daemon_threads = True
    return httpd


def parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)
