"""Clock models: true time, the master clock, and a drifting slave clock.

The master station's clock is identified with true time, so the slave's
synchronization error is entirely captured by its own offset. A slave clock
reading at true time t is t - offset(t). The offset evolves with a
deterministic rate error plus an optional white-frequency random walk:

    offset(t + dt) = offset(t) + rate_error * dt + sqrt(rw_intensity * dt) * g

with g a standard normal draw. With rate_error = 0 and rw_intensity = 0 the
clock is ideal up to a constant offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ClockState",
    "DriftBudget",
    "read_clock",
    "advance",
    "apply_correction",
    "true_time_at_reading",
    "drift_exceedance_probability",
]

MAX_RATE_ERROR = 1e-3


@dataclass(frozen=True)
class ClockState:
    """Slave clock state relative to true time.

    offset holds at true time `epoch`; between epochs it extrapolates with
    rate_error. Random-walk diffusion accrues only through advance(), which
    is what ties a run's clock noise to its RNG stream.
    """

    offset: float = 0.0
    rate_error: float = 0.0
    rw_intensity: float = 0.0
    epoch: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.rate_error) > MAX_RATE_ERROR:
            raise ValueError(f"rate_error {self.rate_error} exceeds {MAX_RATE_ERROR}")
        if self.rw_intensity < 0.0:
            raise ValueError("rw_intensity must be >= 0")


@dataclass(frozen=True)
class DriftBudget:
    """Resynchronization budget: over period T the free-running drift should
    stay below natural_bound except with probability at most exceedance_prob."""

    period: float
    natural_bound: float
    exceedance_prob: float

    def __post_init__(self) -> None:
        if self.period <= 0.0:
            raise ValueError("period must be positive")
        if self.natural_bound <= 0.0:
            raise ValueError("natural_bound must be positive")
        if not 0.0 < self.exceedance_prob < 1.0:
            raise ValueError("exceedance_prob must lie in (0, 1)")


def offset_at(state: ClockState, t: float) -> float:
    """Deterministic extrapolation of the offset to true time t."""
    return state.offset + state.rate_error * (t - state.epoch)


def read_clock(state: ClockState, t: float) -> float:
    """Clock reading at true time t: t - offset(t)."""
    return t - offset_at(state, t)


def true_time_at_reading(state: ClockState, reading: float) -> float:
    """Invert read_clock: the true time at which the clock shows `reading`."""
    # reading = t - offset - rate_error*(t - epoch), solve for t
    return (reading + state.offset - state.rate_error * state.epoch) / (1.0 - state.rate_error)


def advance(state: ClockState, t: float, rng: np.random.Generator | None = None) -> ClockState:
    """Move the clock's epoch forward to true time t, accruing drift.

    Consumes one normal draw from rng iff rw_intensity > 0. Advancing in one
    step or in several steps yields the same offset law (and identical values
    when rw_intensity = 0).
    """
    dt = t - state.epoch
    if dt < 0.0:
        raise ValueError(f"cannot advance clock backwards ({state.epoch} -> {t})")
    new_offset = state.offset + state.rate_error * dt
    if state.rw_intensity > 0.0 and dt > 0.0:
        if rng is None:
            raise ValueError("rng required to advance a clock with rw_intensity > 0")
        new_offset += math.sqrt(state.rw_intensity * dt) * rng.standard_normal()
    return replace(state, offset=new_offset, epoch=t)


def apply_correction(state: ClockState, estimate: float) -> ClockState:
    """Apply an offset estimate: the new offset is the estimation residual."""
    return replace(state, offset=state.offset - estimate)


def drift_exceedance_probability(
    state: ClockState,
    budget: DriftBudget,
    trials: int,
    rng: np.random.Generator | None = None,
    steps: int = 128,
) -> float:
    """Monte Carlo estimate of P[max |drift over the period| > natural_bound].

    Each trial starts from zero offset and keeps the state's rate_error and
    rw_intensity. The path maximum is evaluated on a uniform grid of `steps`
    points including the period end; the purely deterministic case needs no
    grid refinement since |drift| is then monotone in time.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    dt = budget.period / steps
    if state.rw_intensity == 0.0:
        # deterministic path, every trial identical
        exceeds = abs(state.rate_error) * budget.period > budget.natural_bound
        return 1.0 if exceeds else 0.0
    if rng is None:
        raise ValueError("rng required when rw_intensity > 0")
    sigma_step = math.sqrt(state.rw_intensity * dt)
    increments = state.rate_error * dt + sigma_step * rng.standard_normal((trials, steps))
    paths = np.cumsum(increments, axis=1)
    max_drift = np.abs(paths).max(axis=1)
    return float(np.count_nonzero(max_drift > budget.natural_bound) / trials)
