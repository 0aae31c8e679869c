"""Two-way sync/response exchange: messages, authentication, measurements.

The master emits indexed, authenticated sync features; index and transmit
time are in bijection. The slave timestamps arrivals on its own clock,
estimates its offset from a delay prior, and answers after an agreed layover
so the master can measure the round-trip time of the pair.

Wire layout (used for tag computation and transcript logging) is a
length-prefixed binary record:

    sync:     u32 length | 0x01 | index u64 | transmit_time f64 | nonce 16B | tag 32B
    response: u32 length | 0x02 | response_index u64 | replied_to u64
                          | intended_layover f64 | nonce 16B | tag 32B

All integers are big-endian; times are IEEE-754 doubles in seconds. Tags are
HMAC-SHA256 over everything between the length prefix and the tag. Transmit
timestamps are the scheduled feature times, fixed before tag generation;
receive timestamps are taken before tag verification.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass

import numpy as np

from .timebase import ClockState, read_clock, true_time_at_reading

__all__ = [
    "SessionKey",
    "SignalFeature",
    "SyncMessage",
    "ResponseMessage",
    "ArrivalMeasurement",
    "ProtocolError",
    "AuthenticationError",
    "ModelInconsistencyError",
    "make_sync",
    "verify_sync",
    "receive_sync",
    "estimate_offset",
    "make_response",
    "verify_response",
    "receive_response",
    "measure_rtt",
    "refine_delay_prior",
    "MasterEndpoint",
    "SlaveEndpoint",
]

NONCE_BYTES = 16
TAG_BYTES = 32
MIN_KEY_BYTES = 16

_SYNC_KIND = 0x01
_RESPONSE_KIND = 0x02


class ProtocolError(Exception):
    """Violation of the exchange rules (duplicate or unmatched indices, ...)."""


class AuthenticationError(ProtocolError):
    """Message tag failed verification."""


class ModelInconsistencyError(ProtocolError):
    """Measured quantities contradict the configured delay model."""


@dataclass(frozen=True)
class SessionKey:
    """Pre-shared symmetric key for message authentication."""

    key_bytes: bytes

    def __post_init__(self) -> None:
        if len(self.key_bytes) < MIN_KEY_BYTES:
            raise ValueError(f"key must be at least {MIN_KEY_BYTES} bytes")

    @classmethod
    def from_rng(cls, rng: np.random.Generator, n_bytes: int = 32) -> "SessionKey":
        return cls(rng.bytes(n_bytes))


@dataclass(frozen=True)
class SignalFeature:
    """The k-th identifiable feature of the master's signal."""

    index: int
    transmit_time_master_clock: float


@dataclass(frozen=True)
class SyncMessage:
    feature: SignalFeature
    payload_nonce: bytes
    tag: bytes

    def body(self) -> bytes:
        return _sync_body(self.feature.index, self.feature.transmit_time_master_clock,
                          self.payload_nonce)

    def serialize(self) -> bytes:
        return _frame(self.body(), self.tag)


@dataclass(frozen=True)
class ResponseMessage:
    response_index: int
    replied_to: int
    intended_layover: float
    payload_nonce: bytes
    tag: bytes

    def body(self) -> bytes:
        return _response_body(self.response_index, self.replied_to,
                              self.intended_layover, self.payload_nonce)

    def serialize(self) -> bytes:
        return _frame(self.body(), self.tag)


@dataclass(frozen=True)
class ArrivalMeasurement:
    """A timestamped arrival: protocol-visible measurement plus ground truth.

    measured_time is what the receiving station sees on its own clock. The
    true arrival time and the realized noise draw are simulator bookkeeping,
    logged so every report can be audited against the exchange's raw pieces.
    """

    measured_time: float
    noise_sigma: float
    true_time: float
    noise: float


def _sync_body(index: int, transmit_time: float, nonce: bytes) -> bytes:
    return struct.pack(">BQd", _SYNC_KIND, index, transmit_time) + nonce


def _response_body(index: int, replied_to: int, layover: float, nonce: bytes) -> bytes:
    return struct.pack(">BQQd", _RESPONSE_KIND, index, replied_to, layover) + nonce


def _frame(body: bytes, tag: bytes) -> bytes:
    return struct.pack(">I", len(body) + len(tag)) + body + tag


def _tag(key: SessionKey, body: bytes) -> bytes:
    return hmac.new(key.key_bytes, body, hashlib.sha256).digest()


def make_sync(index: int, transmit_true_time: float, master: ClockState,
              key: SessionKey, rng: np.random.Generator) -> SyncMessage:
    """Build the sync message for feature `index` launched at the given true time.

    The recorded transmit time is the master-clock reading at launch; for the
    canonical master (zero offset) that is true time itself.
    """
    t_a = read_clock(master, transmit_true_time)
    nonce = rng.bytes(NONCE_BYTES)
    feature = SignalFeature(index=index, transmit_time_master_clock=t_a)
    tag = _tag(key, _sync_body(index, t_a, nonce))
    return SyncMessage(feature=feature, payload_nonce=nonce, tag=tag)


def verify_sync(msg: SyncMessage, key: SessionKey) -> bool:
    return hmac.compare_digest(msg.tag, _tag(key, msg.body()))


def receive_sync(msg: SyncMessage, arrival_true_time: float, slave: ClockState,
                 noise_sigma: float, key: SessionKey,
                 rng: np.random.Generator) -> ArrivalMeasurement:
    """Timestamp a verified sync arrival on the slave clock.

    Raises AuthenticationError on a bad tag; the caller counts the drop.
    """
    if not verify_sync(msg, key):
        raise AuthenticationError(f"sync {msg.feature.index}: tag rejected")
    noise = noise_sigma * rng.standard_normal() if noise_sigma > 0.0 else 0.0
    measured = read_clock(slave, arrival_true_time) + noise
    return ArrivalMeasurement(measured_time=measured, noise_sigma=noise_sigma,
                              true_time=arrival_true_time, noise=noise)


def estimate_offset(t_a_k: float, tau_bar_ab: float, z_b: float) -> float:
    """Offset estimate from transmit time, one-way delay prior, and arrival."""
    return t_a_k + tau_bar_ab - z_b


def make_response(replied_to: int, arrival: ArrivalMeasurement, intended_layover: float,
                  slave: ClockState, key: SessionKey, rng: np.random.Generator,
                  response_index: int | None = None,
                  ) -> tuple[ResponseMessage, float, float]:
    """Schedule and build the response to sync feature `replied_to`.

    Transmission is scheduled at slave-clock time z_B + intended_layover, so
    the realized layover in true time inherits both the arrival measurement
    noise and the slave's rate error:

        actual = (intended + w) / (1 - rate_error)

    Returns (message, transmit_true_time, actual_layover).
    """
    if intended_layover <= 0.0:
        raise ValueError("intended_layover must be positive")
    if response_index is None:
        response_index = replied_to
    scheduled_local = arrival.measured_time + intended_layover
    transmit_true = true_time_at_reading(slave, scheduled_local)
    actual_layover = transmit_true - arrival.true_time
    nonce = rng.bytes(NONCE_BYTES)
    tag = _tag(key, _response_body(response_index, replied_to, intended_layover, nonce))
    msg = ResponseMessage(response_index=response_index, replied_to=replied_to,
                          intended_layover=intended_layover, payload_nonce=nonce, tag=tag)
    return msg, transmit_true, actual_layover


def verify_response(msg: ResponseMessage, key: SessionKey) -> bool:
    return hmac.compare_digest(msg.tag, _tag(key, msg.body()))


def receive_response(msg: ResponseMessage, arrival_true_time: float, master: ClockState,
                     noise_sigma: float, key: SessionKey,
                     rng: np.random.Generator) -> ArrivalMeasurement:
    """Timestamp a verified response arrival on the master clock."""
    if not verify_response(msg, key):
        raise AuthenticationError(f"response {msg.response_index}: tag rejected")
    noise = noise_sigma * rng.standard_normal() if noise_sigma > 0.0 else 0.0
    measured = read_clock(master, arrival_true_time) + noise
    return ArrivalMeasurement(measured_time=measured, noise_sigma=noise_sigma,
                              true_time=arrival_true_time, noise=noise)


def measure_rtt(z_a_l: float, t_a_k: float) -> float:
    """Round-trip measurement: response arrival minus matched transmit time."""
    return z_a_l - t_a_k


def refine_delay_prior(z_rtt: float, tau_bar_bb: float) -> float:
    """Split a measured round trip into symmetric one-way delay priors."""
    prior = (z_rtt - tau_bar_bb) / 2.0
    if prior < 0.0:
        raise ModelInconsistencyError(
            f"measured rtt {z_rtt} is smaller than the layover {tau_bar_bb}")
    return prior


class MasterEndpoint:
    """Master-side protocol state: feature issuance and response matching."""

    def __init__(self, key: SessionKey, clock: ClockState, noise_sigma: float,
                 rng: np.random.Generator,
                 response_map: dict[int, int] | None = None) -> None:
        self.key = key
        self.clock = clock
        self.noise_sigma = noise_sigma
        self.rng = rng
        # l(k): response index expected for each sync index; identity by default
        self._response_map = response_map
        self._next_index = 0
        self._outstanding: dict[int, float] = {}
        self._features: dict[int, float] = {}
        self._seen_responses: set[int] = set()
        self.auth_failures = 0

    def _expected_response(self, k: int) -> int:
        if self._response_map is None:
            return k
        return self._response_map[k]

    def send_sync(self, transmit_true_time: float, index: int | None = None) -> SyncMessage:
        k = self._next_index if index is None else index
        if k in self._features:
            raise ProtocolError(f"sync index {k} already used in this session")
        msg = make_sync(k, transmit_true_time, self.clock, self.key, self.rng)
        self._features[k] = msg.feature.transmit_time_master_clock
        self._outstanding[self._expected_response(k)] = msg.feature.transmit_time_master_clock
        self._next_index = max(self._next_index, k + 1)
        return msg

    def receive_response(self, msg: ResponseMessage,
                         arrival_true_time: float) -> tuple[int, float]:
        """Match, verify, and timestamp a response; returns (k, measured rtt)."""
        try:
            arrival = receive_response(msg, arrival_true_time, self.clock,
                                       self.noise_sigma, self.key, self.rng)
        except AuthenticationError:
            self.auth_failures += 1
            raise
        l = msg.response_index
        if l in self._seen_responses:
            raise ProtocolError(f"response index {l} replayed")
        if l not in self._outstanding or self._expected_response(msg.replied_to) != l:
            raise ProtocolError(f"response index {l} does not match any open sync")
        self._seen_responses.add(l)
        t_a_k = self._outstanding.pop(l)
        return msg.replied_to, measure_rtt(arrival.measured_time, t_a_k)

    def transmit_time_of(self, k: int) -> float:
        return self._features[k]


class SlaveEndpoint:
    """Slave-side protocol state: sync verification and response scheduling."""

    def __init__(self, key: SessionKey, clock: ClockState, noise_sigma: float,
                 intended_layover: float, rng: np.random.Generator,
                 response_map: dict[int, int] | None = None) -> None:
        self.key = key
        self.clock = clock
        self.noise_sigma = noise_sigma
        self.intended_layover = intended_layover
        self.rng = rng
        self._response_map = response_map
        self._seen: set[int] = set()
        self.auth_failures = 0

    def receive_sync(self, msg: SyncMessage, arrival_true_time: float) -> ArrivalMeasurement:
        try:
            arrival = receive_sync(msg, arrival_true_time, self.clock,
                                   self.noise_sigma, self.key, self.rng)
        except AuthenticationError:
            self.auth_failures += 1
            raise
        k = msg.feature.index
        if k in self._seen:
            raise ProtocolError(f"sync index {k} replayed")
        self._seen.add(k)
        return arrival

    def respond(self, k: int, arrival: ArrivalMeasurement,
                ) -> tuple[ResponseMessage, float, float]:
        l = k if self._response_map is None else self._response_map[k]
        return make_response(k, arrival, self.intended_layover, self.clock,
                             self.key, self.rng, response_index=l)
