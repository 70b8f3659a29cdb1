import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from adaas.detectors import (
    FixedThresholdParams,
    MeanShiftParams,
    RunState,
    Sample,
    SigmaLimitParams,
    WindowState,
    detect_batch,
    initial_state,
    run_stream,
    step,
    step_fixed_threshold,
    step_mean_shift,
    step_sigma_limit,
)
from adaas.errors import InputError, RejectedSampleError


def samples(values, t0=0):
    return [Sample(t0 + 1000 * i, "cpu", float(v)) for i, v in enumerate(values)]


def fired(params, values):
    return [i for i, _ in detect_batch(params, samples(values))]


def feed(step_fn, params, values):
    state = initial_state(params)
    out = []
    for s in samples(values):
        state, v = step_fn(state, params, s)
        out.append(v)
    return out


# --- fixed threshold ------------------------------------------------------


def test_fixed_fires_when_run_reaches_n():
    verdicts = feed(step_fixed_threshold, FixedThresholdParams(5, 3), [6, 7, 8])
    assert [v.fired for v in verdicts] == [False, False, True]


def test_fixed_never_fires_below_threshold():
    assert fired(FixedThresholdParams(5, 3), [4, 4, 4]) == []


def test_fixed_run_resets_on_dip():
    assert fired(FixedThresholdParams(5, 3), [6, 7, 4, 8, 9, 10]) == [5]


def test_fixed_sustained_violation_refires():
    assert fired(FixedThresholdParams(5, 2), [6] * 5) == [1, 2, 3, 4]


def test_fixed_equality_counts_as_violation():
    assert fired(FixedThresholdParams(5, 1), [5, 4.999]) == [0]


def test_fixed_verdict_fields():
    v = feed(step_fixed_threshold, FixedThresholdParams(4.0, 1), [6.0])[0]
    assert (v.fired, v.score, v.threshold_used, v.observed) == (True, 1.5, 4.0, 6.0)


def test_fixed_state_is_run_length():
    state = RunState()
    for x in [6, 6, 1, 6]:
        state, _ = step_fixed_threshold(state, FixedThresholdParams(5, 9), Sample(0, "k", x))
    assert state.run == 1


# --- sigma limit ----------------------------------------------------------


def test_sigma_constant_window_same_value_silent():
    assert fired(SigmaLimitParams(4, 3), [5, 5, 5, 5, 5]) == []


def test_sigma_constant_window_any_deviation_fires():
    assert fired(SigmaLimitParams(4, 3), [5, 5, 5, 5, 9]) == [4]


def test_sigma_example_recomputed():
    v = feed(step_sigma_limit, SigmaLimitParams(4, 3), [1, 2, 3, 4, 10])[-1]
    assert v.fired
    assert v.threshold_used == pytest.approx(3 * math.sqrt(1.25))
    assert v.score == pytest.approx(7.5 / (3 * math.sqrt(1.25)))


def test_sigma_exact_tie_does_not_fire():
    # window [0, 2]: mean 1, std 1; |3 - 1| = 2 = 2 * std
    assert fired(SigmaLimitParams(2, 2.0), [0, 2, 3]) == []
    assert fired(SigmaLimitParams(2, 2.0), [0, 2, math.nextafter(3, 4)]) == [2]


def test_sigma_window_excludes_current_value():
    params = SigmaLimitParams(3, 1.0)
    state = WindowState()
    for x in [1, 2, 3]:
        state, v = step_sigma_limit(state, params, Sample(0, "k", x))
        assert not v.fired
    assert state.buffer == (1.0, 2.0, 3.0)
    state, v = step_sigma_limit(state, params, Sample(0, "k", 100))
    assert v.fired and state.buffer == (2.0, 3.0, 100.0)


def test_sigma_params_validated():
    with pytest.raises(ValueError):
        SigmaLimitParams(1)
    with pytest.raises(ValueError):
        SigmaLimitParams(5, 0)


# --- mean shift -----------------------------------------------------------


def test_mean_shift_identical_windows_silent():
    assert fired(MeanShiftParams(3), [1, 1, 1, 1, 1, 1]) == []


def test_mean_shift_constant_prev_any_shift_fires():
    assert fired(MeanShiftParams(3), [1, 1, 1, 2, 2, 2]) == [5]


def test_mean_shift_example_recomputed():
    v = feed(step_mean_shift, MeanShiftParams(3), [1, 2, 3, 4, 5, 6])[-1]
    assert v.fired
    assert v.threshold_used == pytest.approx(math.sqrt(2 / 3))


def test_mean_shift_fixed_lambda():
    assert fired(MeanShiftParams(2, 10.0), [0, 0, 1, 1]) == []
    assert fired(MeanShiftParams(2, 0.5), [0, 0, 1, 1]) == [3]
    assert fired(MeanShiftParams(2, 1.0), [0, 0, 1, 1]) == []  # |diff| = 1 is not > 1


def test_mean_shift_params_validated():
    with pytest.raises(ValueError):
        MeanShiftParams(0)
    with pytest.raises(ValueError):
        MeanShiftParams(3, -1.0)


# --- batch ----------------------------------------------------------------


def test_batch_examples():
    out = detect_batch(FixedThresholdParams(5, 3), samples([6, 7, 8]))
    assert [(i, v.fired) for i, v in out] == [(2, True)]
    assert detect_batch(SigmaLimitParams(4, 3), samples([5] * 5)) == []
    assert detect_batch(MeanShiftParams(2, 10.0), samples([0, 0, 1, 1])) == []


def test_batch_rejects_unordered_timestamps():
    s = samples([1, 2, 3])
    with pytest.raises(InputError):
        detect_batch(SigmaLimitParams(2), [s[0], s[2], s[1]])
    with pytest.raises(InputError):
        detect_batch(SigmaLimitParams(2), [s[0], s[0]])


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(RejectedSampleError):
        detect_batch(SigmaLimitParams(2), samples([1, bad]))
    with pytest.raises(RejectedSampleError):
        step(initial_state(FixedThresholdParams(1)), FixedThresholdParams(1), Sample(0, "k", bad))


def test_step_rejects_unknown_params():
    with pytest.raises(TypeError):
        step(RunState(), object(), Sample(0, "k", 1.0))


# --- properties -----------------------------------------------------------

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
small_int = st.integers(-5, 5).map(float)
value_lists = st.one_of(st.lists(finite, max_size=80), st.lists(small_int, max_size=80))

any_params = st.one_of(
    st.builds(FixedThresholdParams, st.one_of(finite, small_int), st.integers(1, 6)),
    st.builds(SigmaLimitParams, st.integers(2, 12), st.sampled_from([0.5, 1.0, 2.0, 3.0])),
    st.builds(MeanShiftParams, st.integers(1, 8), st.one_of(st.none(), st.sampled_from([0.0, 0.5, 1.0, 2.0]))),
)


@given(any_params, value_lists)
def test_batch_equals_stream(params, values):
    s = samples(values)
    assert detect_batch(params, s) == run_stream(params, s)


@given(any_params, value_lists)
def test_matches_rational_oracle(params, values):
    if isinstance(params, FixedThresholdParams):
        want = oracles.fixed_threshold_fires(values, params.threshold, params.n)
    elif isinstance(params, SigmaLimitParams):
        want = oracles.sigma_limit_fires(values, params.window_size, params.sigma)
    else:
        want = oracles.mean_shift_fires(values, params.window_size, params.lam)
    assert fired(params, values) == want


@given(st.integers(1, 8), st.one_of(st.none(), st.sampled_from([0.0, 0.5, 3.0])), value_lists)
def test_fast_oracles_agree_with_rational_ones(w, lam, values):
    assert oracles.mean_shift_fires_fast(values, w, lam) == oracles.mean_shift_fires(values, w, lam)
    if w >= 2:
        assert oracles.sigma_limit_fires_fast(values, w, 3.0) == oracles.sigma_limit_fires(values, w, 3.0)


exact_values = st.lists(st.integers(-50, 50).map(lambda k: k / 4), max_size=60)
window_params = st.one_of(
    st.builds(SigmaLimitParams, st.integers(2, 10), st.sampled_from([1.0, 1.5, 2.0, 3.0])),
    st.builds(MeanShiftParams, st.integers(1, 8), st.none()),
)


@given(window_params, exact_values, st.integers(-10_000, 10_000))
def test_translation_invariance(params, values, c):
    assert fired(params, [v + c for v in values]) == fired(params, values)


@given(window_params, exact_values, st.sampled_from([0.125, 0.5, 2.0, 3.0, 7.0, 4096.0]))
def test_positive_scale_invariance(params, values, c):
    assert fired(params, [v * c for v in values]) == fired(params, values)


@given(window_params, finite, st.integers(0, 60))
def test_constant_series_silence(params, v, n):
    assert fired(params, [v] * n) == []


@given(any_params, value_lists)
def test_warm_up(params, values):
    out = fired(params, values)
    if isinstance(params, FixedThresholdParams):
        earliest = params.n - 1
    elif isinstance(params, SigmaLimitParams):
        earliest = params.window_size
    else:
        earliest = 2 * params.window_size - 1
    assert all(i >= earliest for i in out)


@given(any_params, value_lists)
def test_deterministic(params, values):
    assume(values)
    assert run_stream(params, samples(values)) == run_stream(params, samples(values))
