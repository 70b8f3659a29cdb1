import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaas.detectors import FixedThresholdParams, MeanShiftParams, SigmaLimitParams
from adaas.errors import DuplicateAnalysisError, UnknownAnalysisError, ValidationError
from adaas.registry import BUILTINS, DetectorMetadata, ParamSpec, Registry


@pytest.fixture
def reg():
    return Registry()


def test_builtins_registered(reg):
    assert reg.names() == ["fixed_threshold", "sigma_limit", "mean_shift"]


def test_sigma_default_filled(reg):
    assert reg.validate_params("sigma_limit", {"window_size": 20}) == {"window_size": 20, "sigma": 3.0}


def test_int_accepted_for_float(reg):
    out = reg.validate_params("fixed_threshold", {"threshold": 5, "n": 3})
    assert out == {"threshold": 5.0, "n": 3} and isinstance(out["threshold"], float)


@pytest.mark.parametrize("analysis,raw", [
    ("sigma_limit", {}),
    ("sigma_limit", {"window_size": "20"}),
    ("sigma_limit", {"window_size": 20.0}),
    ("sigma_limit", {"window_size": True}),
    ("sigma_limit", {"window_size": 20, "extra": 1}),
    ("sigma_limit", {"window_size": 1}),
    ("fixed_threshold", {"threshold": 1.0, "n": 0}),
    ("mean_shift", {"window_size": 3, "lambda_mode": "other"}),
    ("mean_shift", {"window_size": 3, "lambda_mode": "fixed", "lambda": -1.0}),
])
def test_invalid_params(reg, analysis, raw):
    with pytest.raises(ValidationError):
        reg.validate_params(analysis, raw)


def test_unknown_analysis(reg):
    with pytest.raises(UnknownAnalysisError):
        reg.resolve("unknown_x")


def test_names_case_sensitive(reg):
    with pytest.raises(UnknownAnalysisError):
        reg.resolve("Sigma_Limit")


def test_duplicate_register(reg):
    with pytest.raises(DuplicateAnalysisError):
        reg.register(BUILTINS[0])


def test_register_then_resolve():
    reg = Registry(builtins=False)
    meta = DetectorMetadata("double_fixed", (ParamSpec("threshold", "float", required=True),),
                            "fixed threshold with n = 2", lambda p: FixedThresholdParams(p["threshold"], 2))
    reg.register(meta)
    assert reg.resolve("double_fixed") is meta
    assert reg.build_params("double_fixed", {"threshold": 1.0}) == FixedThresholdParams(1.0, 2)


def test_build_params(reg):
    assert reg.build_params("sigma_limit", {"window_size": 4, "sigma": 2.0}) == SigmaLimitParams(4, 2.0)
    ms = reg.validate_params("mean_shift", {"window_size": 3})
    assert reg.build_params("mean_shift", ms) == MeanShiftParams(3, None)
    ms = reg.validate_params("mean_shift", {"window_size": 3, "lambda_mode": "fixed", "lambda": 0.5})
    assert reg.build_params("mean_shift", ms) == MeanShiftParams(3, 0.5)


def test_metadata_to_dict(reg):
    d = reg.resolve("sigma_limit").to_dict()
    assert d["analysis_name"] == "sigma_limit"
    assert [p["name"] for p in d["param_schema"]] == ["window_size", "sigma"]


raw_params = st.fixed_dictionaries(
    {"window_size": st.integers(2, 100)},
    optional={"sigma": st.one_of(st.integers(1, 9), st.floats(0.1, 10))},
)


@given(raw_params)
def test_validate_idempotent(raw):
    reg = Registry()
    once = reg.validate_params("sigma_limit", raw)
    assert reg.validate_params("sigma_limit", once) == once
