import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: list[tuple[int, str, str, float, str]] = []


class SeriesServer:
    """Tiny time-series endpoint: GET /series?kpi=NAME&from=MS -> [[ts, value], ...]."""

    def __init__(self):
        self.points: dict[str, list[tuple[int, float]]] = {}
        self.fail_next = 0  # respond 503 to this many requests
        self.requests = 0
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                outer.requests += 1
                u = urlparse(self.path)
                if outer.fail_next > 0:
                    outer.fail_next -= 1
                    self.send_response(503)
                    self.end_headers()
                    return
                if u.path != "/series":
                    self.send_response(404)
                    self.end_headers()
                    return
                q = parse_qs(u.query)
                since = int(q["from"][0])
                pts = [[t, v] for t, v in outer.points.get(q["kpi"][0], []) if t > since]
                body = json.dumps(pts).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def series_server():
    srv = SeriesServer()
    yield srv
    srv.close()


class FakeBridge:
    """Bridge double: instances start Running at once.

    ``reject`` holds KPIs whose deploy raises; ``fail_lists`` makes that many
    ``list_instances`` calls raise, to model an unreachable bridge. With
    ``fail_prob`` every call fails independently with that probability.
    """

    def __init__(self, reject=(), fail_lists=0, fail_prob=0.0, seed=0):
        import random
        from adaas.bridge import DetectorInstance, Lifecycle
        self._instance, self._running = DetectorInstance, Lifecycle.RUNNING
        self.instances = {}
        self.reject = set(reject)
        self.fail_lists = fail_lists
        self.mutations = 0
        self.fail_prob = fail_prob
        self.rng = random.Random(seed)

    def _maybe_fail(self):
        if self.fail_prob and self.rng.random() < self.fail_prob:
            raise ConnectionError("flaky bridge")

    def deploy(self, spec):
        from adaas.errors import DuplicateDetectorError
        self.mutations += 1
        self._maybe_fail()
        if spec.kpi in self.reject:
            raise RuntimeError(f"no capacity for {spec.kpi}")
        if spec.detector_id in self.instances:
            raise DuplicateDetectorError(spec.detector_id)
        self.instances[spec.detector_id] = self._instance(spec, self._running, 0)
        return spec.detector_id

    def undeploy(self, detector_id):
        from adaas.errors import UnknownDetectorError
        self.mutations += 1
        self._maybe_fail()
        if detector_id not in self.instances:
            raise UnknownDetectorError(detector_id)
        del self.instances[detector_id]

    def list_instances(self):
        if self.fail_lists > 0:
            self.fail_lists -= 1
            raise ConnectionError("bridge unreachable")
        self._maybe_fail()
        return list(self.instances.values())

    def status(self, detector_id):
        from adaas.errors import UnknownDetectorError
        try:
            return self.instances[detector_id]
        except KeyError:
            raise UnknownDetectorError(detector_id) from None


def wait_for(pred, timeout=5.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(interval)
    return pred()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is None or rep.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    _ACCEPTANCE.append((m.args[0], m.args[1], "PASS" if rep.passed else "FAIL", rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, status, dur, detail in sorted(_ACCEPTANCE):
        line = f"criterion {num}: {status}  {title} ({dur:.1f} s)"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
