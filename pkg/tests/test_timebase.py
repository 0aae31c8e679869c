import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chronoguard.timebase import (
    ClockState,
    DriftBudget,
    advance,
    apply_correction,
    drift_exceedance_probability,
    offset_at,
    read_clock,
    true_time_at_reading,
)


def test_ideal_clock_reads_true_time():
    assert read_clock(ClockState(), 5.0) == 5.0


def test_constant_offset_shifts_reading():
    state = ClockState(offset=2e-6)
    assert read_clock(state, 1.0) == 1.0 - 2e-6


def test_rate_error_integrates_linearly():
    # hand integration: offset(1) = 0 + 1e-6 * 1
    state = ClockState(rate_error=1e-6)
    assert read_clock(state, 1.0) == pytest.approx(1.0 - 1e-6, abs=1e-18)


def test_apply_correction_exact():
    state = ClockState(offset=3e-6)
    assert apply_correction(state, 3e-6).offset == 0.0


def test_apply_correction_residual():
    state = ClockState(offset=3e-6)
    assert apply_correction(state, 2e-6).offset == pytest.approx(1e-6)


def test_periodic_correction_bounds_offset():
    # drift 1e-6 s/s corrected every second with perfect estimates: the
    # offset never exceeds the per-period accumulation
    state = ClockState(rate_error=1e-6)
    for step in range(1, 11):
        state = advance(state, float(step))
        assert abs(state.offset) <= 1e-6 + 1e-18
        state = apply_correction(state, state.offset)
        assert state.offset == 0.0


def test_advance_additivity_deterministic():
    state = ClockState(offset=1e-6, rate_error=5e-7)
    one_hop = advance(state, 2.5)
    two_hops = advance(advance(state, 1.0), 2.5)
    assert one_hop == two_hops


@given(rate=st.floats(-1e-3, 1e-3), t=st.floats(0.0, 1e4))
def test_linear_offset_closed_form(rate, t):
    state = ClockState(offset=1e-6, rate_error=rate)
    assert offset_at(state, t) == pytest.approx(1e-6 + rate * t, rel=1e-12, abs=1e-18)


@given(rate=st.floats(-1e-4, 1e-4), reading=st.floats(0.0, 1e3))
@settings(max_examples=50)
def test_reading_inversion_round_trip(rate, reading):
    state = ClockState(offset=3e-6, rate_error=rate)
    t = true_time_at_reading(state, reading)
    assert read_clock(state, t) == pytest.approx(reading, rel=1e-12, abs=1e-12)


def test_random_walk_requires_rng():
    state = ClockState(rw_intensity=1e-12)
    with pytest.raises(ValueError):
        advance(state, 1.0)


def test_random_walk_variance_matches_diffusion():
    rng = np.random.default_rng(7)
    rw = 1e-12
    state = ClockState(rw_intensity=rw)
    finals = np.array([advance(state, 4.0, rng).offset for _ in range(4000)])
    # var = rw * t; std of the sample variance ~ var * sqrt(2/n)
    assert finals.var() == pytest.approx(rw * 4.0, rel=0.15)


def test_drift_exceedance_zero_for_quiet_clock():
    budget = DriftBudget(period=1.0, natural_bound=5e-5, exceedance_prob=1e-3)
    assert drift_exceedance_probability(ClockState(), budget, 100) == 0.0


def test_drift_exceedance_deterministic_below_bound():
    budget = DriftBudget(period=1.0, natural_bound=5e-5, exceedance_prob=1e-3)
    state = ClockState(rate_error=4e-5)
    assert drift_exceedance_probability(state, budget, 100) == 0.0


def test_drift_exceedance_deterministic_above_bound():
    budget = DriftBudget(period=1.0, natural_bound=5e-5, exceedance_prob=1e-3)
    state = ClockState(rate_error=6e-5)
    assert drift_exceedance_probability(state, budget, 100) == 1.0


def test_drift_exceedance_random_walk_monte_carlo():
    # P[max |W| > c] for Brownian motion with sigma^2 = rw: the bound at
    # one standard deviation of the endpoint is crossed with probability
    # well above zero and below one
    budget = DriftBudget(period=1.0, natural_bound=1e-6, exceedance_prob=1e-3)
    state = ClockState(rw_intensity=1e-12)
    rng = np.random.default_rng(3)
    p = drift_exceedance_probability(state, budget, 2000, rng)
    assert 0.2 < p < 0.9


def test_validation():
    with pytest.raises(ValueError):
        ClockState(rate_error=2e-3)
    with pytest.raises(ValueError):
        ClockState(rw_intensity=-1.0)
    with pytest.raises(ValueError):
        DriftBudget(period=0.0, natural_bound=1e-6, exceedance_prob=0.5)
    with pytest.raises(ValueError):
        DriftBudget(period=1.0, natural_bound=1e-6, exceedance_prob=1.0)
    with pytest.raises(ValueError):
        advance(ClockState(epoch=2.0), 1.0)
