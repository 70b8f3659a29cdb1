"""Declarative request/spec types shared by the server and the bridge."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .dataio import AnomalyRecord, SinkSpec, SourceSpec
from .detectors import Params, Sample, Verdict
from .errors import InputError, ValidationError
from .registry import Registry


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class DetectorSpec:
    kpi: str
    analysis_name: str
    params: Mapping[str, Any]
    source: SourceSpec
    sink: SinkSpec
    detector_id: str = field(default="", compare=False)

    def __post_init__(self):
        # the id is a digest of everything that identifies the detector
        object.__setattr__(self, "params", dict(self.params))
        digest = hashlib.sha256(_canonical(self._identity()).encode()).hexdigest()[:16]
        if self.detector_id and self.detector_id != digest:
            raise InputError(f"detector_id {self.detector_id!r} does not match its content")
        object.__setattr__(self, "detector_id", digest)

    def _identity(self) -> dict[str, Any]:
        return {
            "kpi": self.kpi,
            "analysis": self.analysis_name,
            "params": self.params,
            "source": self.source.to_dict(),
            "sink": self.sink.to_dict(),
        }

    def __hash__(self):
        return hash(self.detector_id)

    def __eq__(self, other):
        return isinstance(other, DetectorSpec) and other.detector_id == self.detector_id

    def to_dict(self) -> dict[str, Any]:
        return {"detector_id": self.detector_id, **self._identity()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DetectorSpec:
        try:
            return cls(d["kpi"], d["analysis"], d.get("params", {}),
                       SourceSpec.from_dict(d["source"]), SinkSpec.from_dict(d["sink"]),
                       d.get("detector_id", ""))
        except (KeyError, TypeError) as e:
            raise InputError(f"bad detector spec: missing {e}") from None

    def build_params(self, registry: Registry) -> Params:
        return registry.build_params(self.analysis_name, self.params)

    def record(self, sample: Sample, verdict: Verdict) -> AnomalyRecord:
        return AnomalyRecord(sample.timestamp, self.detector_id, self.kpi, self.analysis_name,
                             verdict.observed, verdict.threshold_used, verdict.score)


@dataclass(frozen=True)
class DetectionRequest:
    """An operator command: analyze ``kpis`` with ``analysis``."""

    kpis: tuple[str, ...]
    analysis: str
    params: Mapping[str, Any]
    source: SourceSpec | None = None
    sink: SinkSpec | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DetectionRequest:
        if not isinstance(d, Mapping):
            raise InputError("request must be a JSON object")
        analysis = d.get("analysis")
        if isinstance(analysis, Mapping):
            name, params = analysis.get("name"), analysis.get("params", {})
        else:
            name, params = analysis, d.get("params", {})
        if not isinstance(name, str):
            raise InputError("request needs an analysis name")
        if not isinstance(params, Mapping):
            raise InputError("analysis params must be an object")
        kpis = d.get("kpis")
        if not isinstance(kpis, list) or not all(isinstance(k, str) for k in kpis):
            raise InputError("kpis must be a list of strings")
        source = SourceSpec.from_dict(d["source"]) if d.get("source") else None
        sink = SinkSpec.from_dict(d["sink"]) if d.get("sink") else None
        return cls(tuple(kpis), name, dict(params), source, sink)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kpis": list(self.kpis),
                             "analysis": {"name": self.analysis, "params": dict(self.params)}}
        if self.source:
            d["source"] = self.source.to_dict()
        if self.sink:
            d["sink"] = self.sink.to_dict()
        return d


def expand_request(req: DetectionRequest, registry: Registry,
                   default_source: SourceSpec | None = None,
                   default_sink: SinkSpec | None = None) -> list[DetectorSpec]:
    """One detector per KPI, with validated and normalized params."""
    if not req.kpis:
        raise ValidationError("kpis must be non-empty")
    meta = registry.resolve(req.analysis)
    params = registry.validate_params(meta, req.params)
    source = req.source or default_source
    sink = req.sink or default_sink
    if source is None or sink is None:
        raise ValidationError("request has no source/sink and no defaults are configured")
    specs = []
    for kpi in dict.fromkeys(req.kpis):
        specs.append(DetectorSpec(kpi, meta.analysis_name, params, source, sink))
    return specs


@dataclass(frozen=True)
class ChangeSet:
    to_deploy: tuple[DetectorSpec, ...] = ()
    to_undeploy: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.to_deploy and not self.to_undeploy

    def to_dict(self) -> dict[str, Any]:
        return {"to_deploy": [s.detector_id for s in self.to_deploy],
                "to_undeploy": list(self.to_undeploy)}


def compute_changeset(desired: Iterable[DetectorSpec], actual: Iterable[DetectorSpec]) -> ChangeSet:
    desired_by_id = {s.detector_id: s for s in desired}
    actual_ids = {s.detector_id for s in actual}
    return ChangeSet(
        tuple(s for i, s in sorted(desired_by_id.items()) if i not in actual_ids),
        tuple(sorted(actual_ids - desired_by_id.keys())),
    )
