"""Repository of detector kinds and their parameter schemas."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .detectors import FixedThresholdParams, MeanShiftParams, Params, SigmaLimitParams
from .errors import DuplicateAnalysisError, UnknownAnalysisError, ValidationError

_TYPES = {"int": (int,), "float": (int, float), "str": (str,)}
_MISSING = object()


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str  # "int" | "float" | "str"
    required: bool = False
    default: Any = None
    choices: tuple[str, ...] | None = None
    description: str = ""

    def coerce(self, value: Any) -> Any:
        ok = _TYPES[self.type]
        if isinstance(value, bool) or not isinstance(value, ok):
            raise ValidationError(
                f"parameter {self.name!r} must be {self.type}, got {type(value).__name__}")
        if self.type == "float":
            value = float(value)
        if self.choices is not None and value not in self.choices:
            raise ValidationError(f"parameter {self.name!r} must be one of {self.choices}")
        return value


@dataclass(frozen=True)
class DetectorMetadata:
    analysis_name: str
    param_schema: tuple[ParamSpec, ...]
    description: str
    build: Callable[[dict[str, Any]], Params]

    def __post_init__(self):
        for p in self.param_schema:
            if not p.required and p.default is not None:
                p.coerce(p.default)

    def to_dict(self) -> dict[str, Any]:
        return {
            "analysis_name": self.analysis_name,
            "description": self.description,
            "param_schema": [
                {"name": p.name, "type": p.type, "required": p.required, "default": p.default,
                 **({"choices": list(p.choices)} if p.choices else {})}
                for p in self.param_schema
            ],
        }


def _build_mean_shift(p: dict[str, Any]) -> MeanShiftParams:
    lam = None if p["lambda_mode"] == "prev_std" else p["lambda"]
    return MeanShiftParams(p["window_size"], lam)


BUILTINS = (
    DetectorMetadata(
        "fixed_threshold",
        (ParamSpec("threshold", "float", required=True, description="threshold V"),
         ParamSpec("n", "int", required=True, description="consecutive samples >= V")),
        "Fires when n consecutive values are >= threshold.",
        lambda p: FixedThresholdParams(p["threshold"], p["n"]),
    ),
    DetectorMetadata(
        "sigma_limit",
        (ParamSpec("window_size", "int", required=True, description="samples in the window"),
         ParamSpec("sigma", "float", default=3.0, description="std multiplier")),
        "Fires when a value is more than sigma stds away from the mean of the preceding window.",
        lambda p: SigmaLimitParams(p["window_size"], p["sigma"]),
    ),
    DetectorMetadata(
        "mean_shift",
        (ParamSpec("window_size", "int", required=True, description="samples per window"),
         ParamSpec("lambda_mode", "str", default="prev_std", choices=("prev_std", "fixed")),
         ParamSpec("lambda", "float", default=0.0, description="used when lambda_mode=fixed")),
        "Fires when the means of two adjacent windows differ by more than lambda.",
        _build_mean_shift,
    ),
)


class Registry:
    def __init__(self, builtins: bool = True):
        self._entries: dict[str, DetectorMetadata] = {}
        self._lock = threading.Lock()
        if builtins:
            for meta in BUILTINS:
                self.register(meta)

    def register(self, meta: DetectorMetadata) -> None:
        with self._lock:
            if meta.analysis_name in self._entries:
                raise DuplicateAnalysisError(f"analysis {meta.analysis_name!r} already registered")
            self._entries[meta.analysis_name] = meta

    def resolve(self, analysis_name: str) -> DetectorMetadata:
        try:
            return self._entries[analysis_name]
        except KeyError:
            raise UnknownAnalysisError(analysis_name) from None

    def names(self) -> list[str]:
        return list(self._entries)

    def __iter__(self):
        return iter(list(self._entries.values()))

    def validate_params(self, meta: DetectorMetadata | str, raw: Mapping[str, Any]) -> dict[str, Any]:
        if isinstance(meta, str):
            meta = self.resolve(meta)
        return validate_params(meta, raw)

    def build_params(self, analysis_name: str, normalized: Mapping[str, Any]) -> Params:
        return self.resolve(analysis_name).build(dict(normalized))


def validate_params(meta: DetectorMetadata, raw: Mapping[str, Any]) -> dict[str, Any]:
    """Check ``raw`` against the schema; returns params in schema order with defaults filled."""
    known = {p.name for p in meta.param_schema}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"unknown parameter(s) for {meta.analysis_name}: {', '.join(unknown)}")
    out: dict[str, Any] = {}
    for p in meta.param_schema:
        value = raw.get(p.name, _MISSING)
        if value is _MISSING:
            if p.required:
                raise ValidationError(f"missing required parameter {p.name!r} for {meta.analysis_name}")
            value = p.default
        out[p.name] = p.coerce(value)
    try:
        meta.build(dict(out))
    except ValueError as e:
        raise ValidationError(f"{meta.analysis_name}: {e}") from None
    return out
