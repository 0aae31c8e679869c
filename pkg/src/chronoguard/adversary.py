"""Man-in-the-middle delay attacks against the two-way exchange.

Strategies produce a signed adversarial delay for each leg of every exchange.
Delays (positive) are always feasible: the attacker records and re-emits the
authentic signal later. Advances (negative) are feasible only when the
targeted signal is predictable to the attacker or a faster alternative path
exists; otherwise the advance request is rejected and nothing is applied,
which is the simulation counterpart of a forgery or faster-than-light
attempt succeeding only with negligible probability.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .protocol import (
    NONCE_BYTES,
    TAG_BYTES,
    SessionKey,
    SignalFeature,
    SyncMessage,
    verify_sync,
)

__all__ = [
    "FeasibilityRules",
    "ExchangeRecord",
    "NoAttack",
    "FixedSyncDelay",
    "AsymmetricCompensating",
    "ReplayPredictableSync",
    "ForgeResponse",
    "ShortcutPath",
    "RttNoiseExploit",
    "Adversary",
    "forge_attempts",
    "strategy_from_config",
]


@dataclass(frozen=True)
class FeasibilityRules:
    """What the environment actually permits the adversary to do.

    shortcut_available is the time saving of the fastest alternative path (0
    when the stations already use the shortest one). key_known is always
    False for the computationally bounded attacker considered here.
    """

    sync_predictable: bool = False
    response_predictable: bool = False
    shortcut_available: float = 0.0
    key_known: bool = False

    def __post_init__(self) -> None:
        if self.shortcut_available < 0.0:
            raise ValueError("shortcut_available must be >= 0")
        if self.key_known:
            raise ValueError("a PPT adversary never holds the session key")

    def sync_advance_feasible(self, advance: float) -> bool:
        return self.sync_predictable or self.shortcut_available >= advance

    def response_advance_feasible(self, advance: float) -> bool:
        return self.response_predictable or self.shortcut_available >= advance


@dataclass
class ExchangeRecord:
    """Per-exchange attack bookkeeping: what was requested and what applied."""

    exchange_index: int
    sync_delay: float = 0.0
    response_delay: float = 0.0
    sync_rejected: bool = False
    response_rejected: bool = False


@dataclass(frozen=True)
class NoAttack:
    kind = "none"

    def sync_request(self, k: int, rng: np.random.Generator) -> float:
        return 0.0

    def response_request(self, k: int, applied_sync: float) -> float:
        return 0.0


@dataclass(frozen=True)
class FixedSyncDelay:
    """Delay every sync by a fixed amount, optionally jittered; RTT inflates."""

    delay: float
    jitter: float = 0.0
    kind = "fixed_sync_delay"

    def __post_init__(self) -> None:
        if self.delay < 0.0 or self.jitter < 0.0:
            raise ValueError("delay and jitter must be >= 0")

    def sync_request(self, k: int, rng: np.random.Generator) -> float:
        if self.jitter == 0.0:
            return self.delay
        return max(0.0, self.delay + self.jitter * rng.standard_normal())

    def response_request(self, k: int, applied_sync: float) -> float:
        return 0.0


@dataclass(frozen=True)
class _CompensatingAdvance:
    """Advance the sync leg, delay the response leg by the same amount."""

    advance: float

    def __post_init__(self) -> None:
        if self.advance <= 0.0:
            raise ValueError("advance must be positive")

    def sync_request(self, k: int, rng: np.random.Generator) -> float:
        return -self.advance

    def response_request(self, k: int, applied_sync: float) -> float:
        # undo whatever actually landed on the sync leg, keeping RTT nominal
        return -applied_sync


@dataclass(frozen=True)
class AsymmetricCompensating(_CompensatingAdvance):
    kind = "asymmetric_compensating"


@dataclass(frozen=True)
class ReplayPredictableSync(_CompensatingAdvance):
    """Advance a predicted sync waveform, then delay the genuine response."""

    kind = "replay_predictable_sync"


@dataclass(frozen=True)
class ForgeResponse:
    """Fabricate the predictable response early while delaying the real sync.

    The forged response arrives when the master expects it, so the measured
    RTT stays nominal while the slave's estimate absorbs the sync delay.
    """

    delay: float
    kind = "forge_response"

    def __post_init__(self) -> None:
        if self.delay <= 0.0:
            raise ValueError("delay must be positive")

    def sync_request(self, k: int, rng: np.random.Generator) -> float:
        return self.delay

    def response_request(self, k: int, applied_sync: float) -> float:
        return -applied_sync


@dataclass(frozen=True)
class ShortcutPath:
    """Exploit a faster alternative path to advance the sync leg.

    The advance budget is the time saving of the shortcut; the response is
    delayed to keep the RTT consistent with the stations' slower path.
    """

    saving: float
    advance: float
    kind = "shortcut_path"

    def __post_init__(self) -> None:
        if self.saving < 0.0:
            raise ValueError("saving must be >= 0")
        if not 0.0 < self.advance:
            raise ValueError("advance must be positive")

    def sync_request(self, k: int, rng: np.random.Generator) -> float:
        return -self.advance

    def response_request(self, k: int, applied_sync: float) -> float:
        return -applied_sync


@dataclass(frozen=True)
class RttNoiseExploit:
    """Hide a fixed sync delay inside a poorly calibrated RTT reference.

    The delay is applied only when the operator's recorded RTT spread exceeds
    the alert limit, the regime in which the measured RTT cannot be
    definitively attributed to an attack.
    """

    delay: float
    calibration_sigma: float
    alert_limit: float
    kind = "rtt_noise_exploit"

    def __post_init__(self) -> None:
        if self.delay < 0.0:
            raise ValueError("delay must be >= 0")

    def sync_request(self, k: int, rng: np.random.Generator) -> float:
        if self.calibration_sigma > self.alert_limit:
            return self.delay
        return 0.0

    def response_request(self, k: int, applied_sync: float) -> float:
        return 0.0


class Adversary:
    """Applies a strategy under feasibility rules, logging every exchange."""

    def __init__(self, strategy, rules: FeasibilityRules,
                 rng: np.random.Generator | None = None) -> None:
        self.strategy = strategy
        self.rules = rules
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.log: list[ExchangeRecord] = []
        self._open: dict[int, ExchangeRecord] = {}

    def intercept_sync(self, exchange_index: int) -> float:
        """Adversarial component of the master-to-slave leg."""
        record = ExchangeRecord(exchange_index=exchange_index)
        requested = self.strategy.sync_request(exchange_index, self.rng)
        if requested < 0.0 and not self.rules.sync_advance_feasible(-requested):
            record.sync_rejected = True
            record.sync_delay = 0.0
        else:
            record.sync_delay = requested
        self._open[exchange_index] = record
        self.log.append(record)
        return record.sync_delay

    def intercept_response(self, exchange_index: int) -> float:
        """Adversarial component of the slave-to-master leg.

        Requires the matching intercept_sync to have produced this exchange's
        sync-leg component already.
        """
        record = self._open.pop(exchange_index)
        requested = self.strategy.response_request(exchange_index, record.sync_delay)
        if requested < 0.0 and not self.rules.response_advance_feasible(-requested):
            record.response_rejected = True
            record.response_delay = 0.0
        else:
            record.response_delay = requested
        return record.response_delay

    def export_transcript(self, path) -> None:
        """Write the per-exchange attack transcript as CSV."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["exchange_index", "sync_delay_seconds",
                             "response_delay_seconds", "sync_rejected",
                             "response_rejected"])
            for rec in self.log:
                writer.writerow([rec.exchange_index,
                                 f"{rec.sync_delay:.17g}",
                                 f"{rec.response_delay:.17g}",
                                 int(rec.sync_rejected), int(rec.response_rejected)])


def forge_attempts(key: SessionKey, attempts: int, rng: np.random.Generator) -> int:
    """Submit random sync forgeries against verification; count acceptances.

    Each attempt is an adversary-chosen message with a uniformly random tag,
    so the per-attempt acceptance probability is 2**-256.
    """
    accepted = 0
    for i in range(attempts):
        msg = SyncMessage(
            feature=SignalFeature(index=i, transmit_time_master_clock=float(i)),
            payload_nonce=rng.bytes(NONCE_BYTES),
            tag=rng.bytes(TAG_BYTES),
        )
        if verify_sync(msg, key):
            accepted += 1
    return accepted


def strategy_from_config(kind: str, params: dict):
    """Build a strategy from scenario-file fields."""
    if kind == "none":
        return NoAttack()
    if kind == "fixed_sync_delay":
        return FixedSyncDelay(delay=params["delay_seconds"],
                              jitter=params.get("jitter_seconds", 0.0))
    if kind == "asymmetric_compensating":
        return AsymmetricCompensating(advance=params["advance_seconds"])
    if kind == "replay_predictable_sync":
        return ReplayPredictableSync(advance=params["advance_seconds"])
    if kind == "forge_response":
        return ForgeResponse(delay=params["delay_seconds"])
    if kind == "shortcut_path":
        return ShortcutPath(saving=params["saving_seconds"],
                            advance=params["advance_seconds"])
    if kind == "rtt_noise_exploit":
        return RttNoiseExploit(delay=params["delay_seconds"],
                               calibration_sigma=params["calibration_sigma_seconds"],
                               alert_limit=params["alert_limit_seconds"])
    raise ValueError(f"unknown attack kind {kind!r}")
