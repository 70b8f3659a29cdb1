"""Operator command line: talk to a control server or run things locally.

Exit codes: 0 success, 1 remote or validation failure, 2 local usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from typing import Any, Sequence

from .dataio import SinkSpec, SourceSpec, read_csv_samples
from .detectors import detect_batch
from .errors import AdaasError, MalformedRowError, SourceNotFoundError
from .registry import Registry
from .specs import DetectorSpec

ENV_SERVER = "ADAAS_SERVER"
DEFAULT_SERVER = "http://127.0.0.1:8080"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class RemoteError(Exception):
    pass


@dataclass
class CliConfig:
    server: str = DEFAULT_SERVER
    output: str = "table"  # "table" | "json"
    config_path: str | None = None

    def __post_init__(self):
        u = urllib.parse.urlparse(self.server)
        if u.scheme not in ("http", "https") or not u.netloc:
            raise UsageError(f"malformed server URL {self.server!r}")
        if self.output not in ("table", "json"):
            raise UsageError(f"unknown output format {self.output!r}")
        self.server = self.server.rstrip("/")


# --------------------------------------------------------------------------
# HTTP


def request(cfg: CliConfig, method: str, path: str, body: Any = None, timeout: float = 60.0) -> Any:
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(cfg.server + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read() or b"null")
    except urllib.error.HTTPError as e:
        try:
            msg = json.loads(e.read()).get("error", e.reason)
        except (ValueError, AttributeError):
            msg = e.reason
        raise RemoteError(f"server returned {e.code}: {msg}") from None
    except (urllib.error.URLError, OSError) as e:
        reason = getattr(e, "reason", e)
        raise RemoteError(f"cannot reach {cfg.server}: {reason}") from None


# --------------------------------------------------------------------------
# output


def emit(cfg: CliConfig, obj: Any, text: str | None = None) -> None:
    if cfg.output == "json":
        print(json.dumps(obj, separators=(",", ":"), sort_keys=True))
    elif text is not None:
        print(text)


def table(rows: Sequence[Sequence[Any]], header: Sequence[str]) -> str:
    cells = [list(map(str, header))] + [["" if c is None else str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells)


def print_apply_result(cfg: CliConfig, result: dict) -> bool:
    outcomes = result.get("outcomes", {})
    ok = all(o.get("ok") for o in outcomes.values())
    if cfg.output == "json":
        emit(cfg, result)
        return ok
    if not result.get("to_deploy") and not result.get("to_undeploy"):
        print("no changes")
        return ok
    for did in result.get("to_undeploy", []):
        o = outcomes.get(did, {})
        print(f"undeployed {did}" if o.get("ok", True) else f"undeploy failed {did}: {o.get('error')}")
    for did in result.get("to_deploy", []):
        o = outcomes.get(did, {})
        print(f"deployed {did}" if o.get("ok", True) else f"deploy failed {did}: {o.get('error')}")
    return ok


# --------------------------------------------------------------------------
# commands


def cmd_apply(cfg: CliConfig, args) -> int:
    try:
        with open(args.file, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise UsageError(f"cannot read {args.file}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{args.file}: parse error: {e}") from None
    result = request(cfg, "POST", "/desired-state", doc)
    return EXIT_OK if print_apply_result(cfg, result) else EXIT_FAIL


def cmd_status(cfg: CliConfig, args) -> int:
    rows = request(cfg, "GET", "/detectors")
    if cfg.output == "json":
        for r in rows:
            emit(cfg, r)
        return EXIT_OK
    print(table([(r["detector_id"], r["kpi"], r["analysis"], r["state"], r.get("samples_processed", ""),
                  r.get("anomalies_fired", ""), r.get("reason") or "") for r in rows],
                ("ID", "KPI", "ANALYSIS", "STATE", "PROCESSED", "FIRED", "REASON")))
    return EXIT_OK


def cmd_delete(cfg: CliConfig, args) -> int:
    result = request(cfg, "DELETE", "/detectors/" + urllib.parse.quote(args.id, safe=""))
    return EXIT_OK if print_apply_result(cfg, result) else EXIT_FAIL


def cmd_analyses(cfg: CliConfig, args) -> int:
    metas = request(cfg, "GET", "/analyses")
    if cfg.output == "json":
        for m in metas:
            emit(cfg, m)
        return EXIT_OK
    rows = []
    for m in metas:
        params = ", ".join(
            f"{p['name']}:{p['type']}" + ("" if p.get("required") else f"={p.get('default')}")
            for p in m.get("param_schema", []))
        rows.append((m["analysis_name"], params, m.get("description", "")))
    print(table(rows, ("ANALYSIS", "PARAMS", "DESCRIPTION")))
    return EXIT_OK


def parse_param(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise UsageError(f"--param expects key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def run_offline(analysis: str, params: dict[str, Any], input_path: str, kpi: str, out_path: str,
                registry: Registry | None = None) -> int:
    """Run one detector over a sample CSV; returns the number of anomalies written.

    The detector identity uses the same source and sink paths a bridge
    deployment would, so the output matches an online replay byte for byte.
    """
    registry = registry or Registry()
    normalized = registry.validate_params(analysis, params)
    spec = DetectorSpec(kpi, analysis, normalized, SourceSpec("csv", path=input_path),
                        SinkSpec("jsonl", path=out_path))
    return replay_spec(spec, registry)


def replay_spec(spec: DetectorSpec, registry: Registry, out_path: str | None = None) -> int:
    """Batch-run a CSV-sourced spec, writing to ``out_path`` (default: its sink path)."""
    samples = list(read_csv_samples(spec.source.path, spec.kpi))
    hits = detect_batch(spec.build_params(registry), samples)
    with open(out_path or spec.sink.path, "w", encoding="utf-8", newline="") as f:
        for idx, verdict in hits:
            f.write(spec.record(samples[idx], verdict).to_json() + "\n")
    return len(hits)


def cmd_run(cfg: CliConfig, args) -> int:
    params = dict(parse_param(p) for p in args.param)
    try:
        n = run_offline(args.analysis, params, args.input, args.kpi, args.out)
    except SourceNotFoundError as e:
        raise UsageError(str(e)) from None
    except MalformedRowError as e:
        raise UsageError(f"{args.input}: {e}") from None
    emit(cfg, {"anomalies": n, "out": args.out}, f"{n} anomalies written to {args.out}")
    return EXIT_OK


def cmd_experiment(cfg: CliConfig, args) -> int:
    from .experiment import ExperimentConfig, run_experiment
    from .prediction import fmt_metric

    try:
        ecfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    except (OSError, ValueError, TypeError) as e:
        raise UsageError(f"bad experiment config: {e}") from None
    if args.seed is not None:
        ecfg.seed = args.seed
    result = run_experiment(ecfg, args.out)
    if cfg.output == "json":
        for r in result.reports:
            emit(cfg, {"W": r.window_minutes, "past": r.past_minutes,
                       "precision": r.precision, "recall": r.recall,
                       "event_precision": r.event_precision})
        emit(cfg, {"checks": result.checks, "seconds": round(result.seconds, 2)})
        return EXIT_OK
    print(table([(r.window_minutes, r.past_minutes, fmt_metric(r.precision), fmt_metric(r.recall),
                  fmt_metric(r.event_precision)) for r in result.reports],
                ("W", "PAST", "PRECISION", "RECALL", "EVENT_PRECISION")))
    c = result.checks
    print(f"\npredicted failing runs: {c['predicted_failing_runs']}/{c['failing_runs']}")
    print(f"normal-run stable false-positive rate: {c['normal_false_stable_rate']:.4f}")
    for fault, lead in c["fault_lead_time_min"].items():
        print(f"mean lead time {fault}: {'missed' if lead is None else f'{lead:.1f} min'}")
    print(f"outputs in {args.out} ({result.seconds:.1f} s)")
    return EXIT_OK


def cmd_serve(cfg: CliConfig, args) -> int:
    from .bridge import InProcessBridge
    from .server import ControlServer, ServerConfig, make_http_server, parse_listen

    try:
        scfg = ServerConfig.load(args.config) if args.config else ServerConfig()
    except (OSError, ValueError) as e:
        raise UsageError(f"bad server config: {e}") from None
    if args.listen:
        scfg.listen = args.listen
    registry = Registry()
    bridge = InProcessBridge(registry)
    control = ControlServer(bridge, registry, scfg)
    host, port = parse_listen(scfg.listen)
    httpd = make_http_server(control, host, port)
    print(f"listening on http://{host}:{httpd.server_address[1]}", flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
        control.close()
        bridge.shutdown()
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaas", description="Declarative anomaly detection.")
    p.add_argument("--server", help=f"control server URL (env {ENV_SERVER}, default {DEFAULT_SERVER})")
    p.add_argument("--format", dest="output", choices=("table", "json"), default="table")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("apply", help="apply a desired-state document")
    s.add_argument("-f", "--file", required=True)
    s.set_defaults(func=cmd_apply)

    s = sub.add_parser("status", help="list detectors and their state")
    s.set_defaults(func=cmd_status)

    s = sub.add_parser("delete", help="remove one detector from the desired state")
    s.add_argument("id")
    s.set_defaults(func=cmd_delete)

    s = sub.add_parser("analyses", help="list registered analyses")
    s.set_defaults(func=cmd_analyses)

    s = sub.add_parser("run", help="run one detector offline over a sample CSV")
    s.add_argument("--analysis", required=True)
    s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--input", required=True)
    s.add_argument("--kpi", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("experiment", help="run the synthetic failure-prediction experiment")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("serve", help="run a control server with an in-process bridge")
    s.add_argument("--config")
    s.add_argument("--listen", help="host:port, overrides the config")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = CliConfig(args.server or os.environ.get(ENV_SERVER) or DEFAULT_SERVER,
                        args.output, getattr(args, "config", None))
        return args.func(cfg, args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RemoteError, AdaasError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
