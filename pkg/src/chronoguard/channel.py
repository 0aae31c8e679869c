"""Stochastic path delays: store-and-forward router queueing plus fixed floors.

Each hop is a router under cross-traffic load with idle probability rho.
Timing packets get non-preemptive priority, so the per-hop delay is zero with
probability rho and otherwise uniform on (0, t_max), where t_max is the time
to finish servicing one full-size packet already on the wire. With the
default gigabit service rate (2**30 bits/s) and 1542-byte packets,
t_max = 1542*8/2**30 ~ 11.49 microseconds.

A path is N independent hops plus a deterministic propagation floor. The
module also provides closed-form moments and a vectorized sampler for the
round-trip sum used by calibration and detection Monte Carlo runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RouterHopModel",
    "PathDelayModel",
    "TwoWayChannel",
    "DelaySample",
    "sample_hop_delay",
    "sample_path_delay",
    "sample_path_delays",
    "sample_rtt",
    "sample_rtt_batch_means",
    "analytic_rtt_moments",
]

GIGABIT = float(2**30)
DEFAULT_PACKET_BITS = 1542.0 * 8.0


@dataclass(frozen=True)
class RouterHopModel:
    """Single-hop queueing delay: zero w.p. idle_prob, else U(0, t_max)."""

    idle_prob: float
    service_rate_bps: float = GIGABIT
    packet_bits: float = DEFAULT_PACKET_BITS

    def __post_init__(self) -> None:
        if not 0.0 <= self.idle_prob <= 1.0:
            raise ValueError("idle_prob must lie in [0, 1]")
        if self.service_rate_bps <= 0.0 or self.packet_bits <= 0.0:
            raise ValueError("service rate and packet size must be positive")

    @property
    def t_max(self) -> float:
        return self.packet_bits / self.service_rate_bps

    @property
    def mean(self) -> float:
        return (1.0 - self.idle_prob) * self.t_max / 2.0

    @property
    def variance(self) -> float:
        second_moment = (1.0 - self.idle_prob) * self.t_max**2 / 3.0
        return second_moment - self.mean**2


@dataclass(frozen=True)
class PathDelayModel:
    """One direction of the channel: `hops` iid router hops above a fixed floor."""

    hops: int
    hop: RouterHopModel
    fixed_floor: float = 0.0

    def __post_init__(self) -> None:
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if self.fixed_floor < 0.0:
            raise ValueError("fixed_floor must be >= 0")

    @property
    def mean(self) -> float:
        return self.fixed_floor + self.hops * self.hop.mean

    @property
    def variance(self) -> float:
        return self.hops * self.hop.variance


@dataclass(frozen=True)
class TwoWayChannel:
    """Forward (master to slave) and reverse legs of one exchange."""

    forward: PathDelayModel
    reverse: PathDelayModel


@dataclass(frozen=True)
class DelaySample:
    """One leg's realized delay split into its natural and adversarial parts."""

    natural: float
    adversarial: float = 0.0

    @property
    def total(self) -> float:
        return self.natural + self.adversarial

    def require_physical(self) -> "DelaySample":
        if self.total < 0.0:
            raise ValueError(
                f"leg delay {self.total} is negative: adversarial advance "
                f"{self.adversarial} exceeds the natural delay {self.natural}"
            )
        return self


def sample_hop_delay(hop: RouterHopModel, rng: np.random.Generator) -> float:
    """Draw one hop delay."""
    u = rng.random()
    if u < hop.idle_prob:
        return 0.0
    return hop.t_max * (u - hop.idle_prob) / (1.0 - hop.idle_prob)


def sample_path_delay(path: PathDelayModel, rng: np.random.Generator) -> float:
    """Draw one path delay: floor plus the sum of the hop delays."""
    total = path.fixed_floor
    for _ in range(path.hops):
        total += sample_hop_delay(path.hop, rng)
    return total


def sample_path_delays(path: PathDelayModel, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized draw of `size` independent path delays (float64)."""
    rho = path.hop.idle_prob
    if rho >= 1.0:
        return np.full(size, path.fixed_floor)
    u = rng.random((size, path.hops))
    delays = np.maximum(u - rho, 0.0).sum(axis=1) * (path.hop.t_max / (1.0 - rho))
    return delays + path.fixed_floor


def sample_rtt(
    channel: TwoWayChannel,
    size: int,
    rng: np.random.Generator,
    layover: float = 0.0,
) -> np.ndarray:
    """Vectorized round-trip times: forward leg + layover + reverse leg."""
    fwd = sample_path_delays(channel.forward, size, rng)
    rev = sample_path_delays(channel.reverse, size, rng)
    return fwd + rev + layover


def _mixture_sums(
    n_sums: int,
    n_terms: int,
    rho: float,
    rng: np.random.Generator,
    chunk_rows: int | None = None,
) -> np.ndarray:
    """Row sums of n_terms iid draws of max(U - rho, 0), U uniform on [0, 1).

    Uses float32 uniforms with in-place transforms for speed; row sums are
    pairwise-accumulated so the per-row error (~1e-4 relative to the row
    standard deviation) is orders of magnitude below every statistical
    tolerance in this package. Returned sums are float64.
    """
    if chunk_rows is None:
        chunk_rows = max(1, (1 << 22) // max(n_terms, 1))
    out = np.empty(n_sums)
    buf = np.empty((chunk_rows, n_terms), dtype=np.float32)
    rho32 = np.float32(rho)
    zero32 = np.float32(0.0)
    i = 0
    while i < n_sums:
        m = min(chunk_rows, n_sums - i)
        b = buf[:m]
        rng.random(out=b.reshape(-1), dtype=np.float32)
        np.subtract(b, rho32, out=b)
        np.maximum(b, zero32, out=b)
        out[i : i + m] = b.sum(axis=1, dtype=np.float64)
        i += m
    return out


def sample_rtt_batch_means(
    channel: TwoWayChannel,
    batch_size: int,
    epochs: int,
    rng: np.random.Generator,
    layover: float = 0.0,
) -> np.ndarray:
    """Means of `batch_size` round-trip times, one mean per epoch.

    This is the workhorse for calibration and threshold Monte Carlo runs,
    where epochs * batch_size can reach 10^8 round trips.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    fwd, rev = channel.forward, channel.reverse
    base = layover + fwd.fixed_floor + rev.fixed_floor
    if fwd.hop == rev.hop:
        legs = [PathDelayModel(hops=fwd.hops + rev.hops, hop=fwd.hop)]
    else:
        legs = [fwd, rev]
    means = np.full(epochs, base)
    for leg in legs:
        rho = leg.hop.idle_prob
        if rho >= 1.0:
            continue
        sums = _mixture_sums(epochs, batch_size * leg.hops, rho, rng)
        means += sums * (leg.hop.t_max / (1.0 - rho) / batch_size)
    return means


def analytic_rtt_moments(
    forward: PathDelayModel,
    reverse: PathDelayModel,
    layover: float = 0.0,
) -> tuple[float, float]:
    """Closed-form (mean, std) of the round-trip time under independent hops."""
    mean = forward.mean + reverse.mean + layover
    std = math.sqrt(forward.variance + reverse.variance)
    return mean, std
