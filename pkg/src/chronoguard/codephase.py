"""Continuous-waveform synchronization: chip codes, correlation, code phase.

Instead of discrete packets, each station transmits a pseudo-random ±1 chip
sequence derived from shared key material. Receivers run an
integrate-and-dump sampler on their own clock grid (each sample is the mean
of the incoming waveform over the preceding sample period), correlate a
window of samples against a local replica, and take the correlation fit as
the time of arrival of a known bit start. The slave answers with its own
code whose replying bit start is placed a fixed code-phase offset (the
layover) after the measured arrival, so the master measures round-trip time
exactly as in the packet abstraction.

The integrate-and-dump model matters: sampled values are exactly linear in
the sub-sample arrival phase, so fitting the window against the two
adjacent integer-phase replica patterns recovers the phase itself. A
noiseless on-grid arrival is recovered exactly; an off-grid one to within
numerical precision; a noisy one with standard deviation of roughly
noise_sigma * chip_period / sqrt(n_replica_samples).

Carrier phase is modeled as zero: all timing content lives in the code
phase, which is what the desk-scale pipeline exercises.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .timebase import ClockState, true_time_at_reading

__all__ = [
    "ChipSequence",
    "SampledWindow",
    "CorrelationResult",
    "NoFeatureDetected",
    "generate_code",
    "sample_code",
    "receive_window",
    "correlate_detect",
    "codephase_response_schedule",
    "dump_correlation_trace",
]

MIN_CODE_BITS = 64


class NoFeatureDetected(Exception):
    """Correlation peak fell below the detection threshold."""


@dataclass(frozen=True)
class ChipSequence:
    """Pseudo-random bits mapped to ±1 chips of fixed period."""

    bits: np.ndarray          # uint8 array of 0/1
    chip_period: float

    def __post_init__(self) -> None:
        if self.chip_period <= 0.0:
            raise ValueError("chip_period must be positive")

    @property
    def n_bits(self) -> int:
        return len(self.bits)

    @property
    def chips(self) -> np.ndarray:
        """Chip values 2b - 1 in {-1, +1}."""
        return self.bits.astype(np.int8) * 2 - 1

    @property
    def duration(self) -> float:
        return self.n_bits * self.chip_period

    def value_at(self, t: np.ndarray | float) -> np.ndarray:
        """Instantaneous waveform value at time t past the first chip's start
        (zero outside the code span)."""
        t = np.asarray(t, dtype=float)
        idx = np.floor(t / self.chip_period).astype(np.int64)
        inside = (idx >= 0) & (idx < self.n_bits)
        out = np.zeros(t.shape)
        out[inside] = self.bits[idx[inside]].astype(float) * 2.0 - 1.0
        return out

    def integral_at(self, t: np.ndarray) -> np.ndarray:
        """Running integral of the waveform from the code start to time t.

        Constant outside the code span, since the waveform is zero there.
        """
        t = np.asarray(t, dtype=float)
        chips = self.chips.astype(float)
        prefix = np.concatenate([[0.0], np.cumsum(chips) * self.chip_period])
        tc = np.clip(t, 0.0, self.duration)
        idx = np.minimum(np.floor(tc / self.chip_period).astype(np.int64),
                         self.n_bits - 1)
        return prefix[idx] + chips[idx] * (tc - idx * self.chip_period)


@dataclass(frozen=True)
class SampledWindow:
    """Receiver-side integrate-and-dump samples taken on the local clock grid."""

    samples: np.ndarray
    sample_rate: float
    start_time_local_clock: float


@dataclass(frozen=True)
class CorrelationResult:
    peak_lag: int
    peak_value: float
    toa_local_clock: float
    toa_sigma: float


def generate_code(seed_material: bytes | int, n_bits: int, chip_period: float) -> ChipSequence:
    """Deterministic pseudo-random chip sequence from key material.

    The material is hashed so that distinct inputs yield unrelated codes; the
    unpredictability of the result to a third party is an assumption carried
    by the secrecy of the material.
    """
    if n_bits < MIN_CODE_BITS:
        raise ValueError(f"need at least {MIN_CODE_BITS} bits")
    if isinstance(seed_material, int):
        seed_material = seed_material.to_bytes(16, "big", signed=False)
    digest = hashlib.sha256(seed_material).digest()
    entropy = int.from_bytes(digest[:16], "big")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
    bits = rng.integers(0, 2, size=n_bits, dtype=np.uint8)
    return ChipSequence(bits=bits, chip_period=chip_period)


def _dump_samples(code: ChipSequence, offsets: np.ndarray, sample_period: float) -> np.ndarray:
    """Integrate-and-dump values at the given time offsets past the code start.

    Each sample is the mean of the waveform over the sample period ending at
    its offset; silence (zero) before the code start and after its end.
    """
    upper = code.integral_at(offsets)
    lower = code.integral_at(offsets - sample_period)
    return (upper - lower) / sample_period


def sample_code(code: ChipSequence, sample_rate: float, n_samples: int,
                first_bit: int = 0, lead_samples: int = 0) -> np.ndarray:
    """Replica samples aligned to the given bit boundary.

    Sample r is the integrate-and-dump value whose integration period ends r
    sample periods after the bit start; lead_samples extends the replica
    backwards so the pattern one sample earlier is a pure shift.
    """
    ts = 1.0 / sample_rate
    r = np.arange(-lead_samples, n_samples)
    offsets = first_bit * code.chip_period + r * ts
    return _dump_samples(code, offsets, ts)


def receive_window(
    code: ChipSequence,
    code_start_true: float,
    path_delay: float,
    clock: ClockState,
    window_start_local: float,
    n_samples: int,
    sample_rate: float,
    noise_sigma: float,
    rng: np.random.Generator | None = None,
) -> SampledWindow:
    """Sample the delayed incoming code on the receiver's clock grid.

    The transmitted code's first chip left the far station at true time
    code_start_true and arrives path_delay later. Local sample instants are
    mapped through the receiver clock, so offset and rate error distort the
    window exactly as they would a real sampler.
    """
    local_times = window_start_local + np.arange(n_samples) / sample_rate
    if clock.rate_error == 0.0:
        true_times = local_times + clock.offset
    else:
        true_times = np.array([true_time_at_reading(clock, s) for s in local_times])
    offsets = true_times - path_delay - code_start_true
    samples = _dump_samples(code, offsets, 1.0 / sample_rate)
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("rng required for a noisy window")
        samples = samples + noise_sigma * rng.standard_normal(n_samples)
    return SampledWindow(samples=samples, sample_rate=sample_rate,
                         start_time_local_clock=window_start_local)


def correlate_detect(
    window: SampledWindow,
    code: ChipSequence,
    noise_sigma: float,
    bit_index: int = 0,
    replica_bits: int = 32,
    threshold_fraction: float = 0.5,
) -> CorrelationResult:
    """Locate the start of the code's bit_index-th bit inside the window.

    Candidate arrivals are lag + phase with integer lag and phase in [0, 1)
    samples. Under the integrate-and-dump model the window is exactly the
    convex mix of the two adjacent integer-phase code patterns, so a
    least-squares fit over the whole window against that mix recovers the
    arrival; the lag grid spans the window slack beyond the nominal
    replica_bits feature span. A fit whose correlation falls below
    threshold_fraction of the pattern's self-correlation raises
    NoFeatureDetected.
    """
    fs = window.sample_rate
    x = window.samples
    n_w = len(x)
    ts = 1.0 / fs
    n_r = int(round(replica_bits * code.chip_period * fs))
    n_lags = n_w - n_r
    if n_lags < 1:
        raise ValueError("window shorter than the correlation replica")

    # full-window template: value q samples after the bit start, for
    # q in [-(n_lags + 1), n_w)
    lead = n_lags + 1
    template = sample_code(code, fs, n_w, first_bit=bit_index, lead_samples=lead)

    # e[i] = <window, pattern with bit start at window index i>
    c = np.correlate(template, x, mode="valid")
    e = c[1 : n_lags + 2][::-1]          # e[0..n_lags]

    sq = np.concatenate([[0.0], np.cumsum(template * template)])
    adj = np.concatenate([[0.0], np.cumsum(template[1:] * template[:-1])])
    starts = lead - np.arange(n_lags + 1)          # template index of window sample 0
    n0 = sq[starts + n_w] - sq[starts]             # ||pattern_i||^2
    n01 = adj[starts + n_w - 1] - adj[starts - 1]  # <pattern_i, pattern_{i+1}>
    n01 = n01[:n_lags]

    denom = n0[:-1] + n0[1:] - 2.0 * n01
    denom = np.maximum(denom, 1e-12)
    phase = (e[1:] - e[:-1] + n0[:-1] - n01) / denom
    np.clip(phase, 0.0, np.nextafter(1.0, 0.0), out=phase)
    fit = (1.0 - phase) * e[:-1] + phase * e[1:]
    norm = (1.0 - phase) ** 2 * n0[:-1] + 2.0 * phase * (1.0 - phase) * n01 \
        + phase**2 * n0[1:]
    cost = norm - 2.0 * fit
    lag = int(np.argmin(cost))
    peak_value = float(fit[lag])
    if peak_value < threshold_fraction * n0[lag]:
        raise NoFeatureDetected(
            f"correlation {peak_value:.1f} below "
            f"{threshold_fraction:.2f} * {n0[lag]:.0f}")
    toa = window.start_time_local_clock + (lag + float(phase[lag])) * ts
    toa_sigma = noise_sigma * ts / math.sqrt(float(denom[lag])) if noise_sigma > 0 else 0.0
    return CorrelationResult(peak_lag=lag, peak_value=peak_value,
                             toa_local_clock=toa, toa_sigma=toa_sigma)


def codephase_response_schedule(z_b_k: float, tau_bar_bb: float,
                                code_b: ChipSequence) -> float:
    """Local-clock start time of the response code's replying bit.

    The layover is a code-phase offset from the measured arrival of the
    master's bit start, mirroring the packet response's scheduling rule.
    """
    del code_b  # the mapping is carried by code identity, not its contents
    return z_b_k + tau_bar_bb


def dump_correlation_trace(window: SampledWindow, code: ChipSequence,
                           path, bit_index: int = 0, replica_bits: int = 32) -> None:
    """Write (lag, correlation) pairs as CSV for offline inspection."""
    fs = window.sample_rate
    n_r = int(round(replica_bits * code.chip_period * fs))
    replica = sample_code(code, fs, n_r, first_bit=bit_index)
    scores = np.correlate(window.samples, replica, mode="valid")
    with open(path, "w") as fh:
        fh.write("lag_samples,correlation\n")
        for lag, value in enumerate(scores):
            fh.write(f"{lag},{value:.17g}\n")
