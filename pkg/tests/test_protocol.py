import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chronoguard.protocol import (
    ArrivalMeasurement,
    AuthenticationError,
    MasterEndpoint,
    ModelInconsistencyError,
    ProtocolError,
    SessionKey,
    SlaveEndpoint,
    estimate_offset,
    make_response,
    make_sync,
    measure_rtt,
    receive_sync,
    refine_delay_prior,
    verify_sync,
)
from chronoguard.timebase import ClockState


@pytest.fixture()
def key():
    return SessionKey.from_rng(np.random.default_rng(0))


@pytest.fixture()
def rng():
    return np.random.default_rng(1)


def test_first_sync_message(key, rng):
    msg = make_sync(0, 0.0, ClockState(), key, rng)
    assert msg.feature.index == 0
    assert msg.feature.transmit_time_master_clock == 0.0
    assert verify_sync(msg, key)


def test_tampered_nonce_fails_verification(key, rng):
    msg = make_sync(3, 1.0, ClockState(), key, rng)
    tampered = msg.__class__(
        feature=msg.feature,
        payload_nonce=bytes([msg.payload_nonce[0] ^ 0x01]) + msg.payload_nonce[1:],
        tag=msg.tag,
    )
    assert not verify_sync(tampered, key)


def test_receive_sync_noiseless_ideal_clock(key, rng):
    msg = make_sync(0, 0.0, ClockState(), key, rng)
    arrival = receive_sync(msg, 1.0, ClockState(), 0.0, key, rng)
    assert arrival.measured_time == 1.0


def test_receive_sync_offset_algebra(key, rng):
    msg = make_sync(0, 0.0, ClockState(), key, rng)
    arrival = receive_sync(msg, 1.0, ClockState(offset=2e-6), 0.0, key, rng)
    assert arrival.measured_time == pytest.approx(1.0 - 2e-6, abs=1e-15)


def test_receive_sync_rejects_bad_tag(key, rng):
    msg = make_sync(0, 0.0, ClockState(), key, rng)
    forged = msg.__class__(feature=msg.feature, payload_nonce=msg.payload_nonce,
                           tag=bytes(32))
    with pytest.raises(AuthenticationError):
        receive_sync(forged, 1.0, ClockState(), 0.0, key, rng)


def test_measurement_noise_moment(key):
    rng = np.random.default_rng(2)
    sigma = 1e-8
    slave = ClockState()
    msg = make_sync(0, 0.0, ClockState(), key, rng)
    errors = np.empty(100_000)
    for i in range(len(errors)):
        arrival = receive_sync(msg, 1.0, slave, sigma, key, rng)
        errors[i] = arrival.measured_time - 1.0
    assert 0.97e-8 <= errors.std() <= 1.03e-8


def test_estimate_offset_identities():
    assert estimate_offset(0.0, 0.0, 0.0) == 0.0
    assert estimate_offset(1.0, 40e-6, 1.000040) == pytest.approx(0.0, abs=1e-12)


def test_estimate_offset_tracks_adversarial_delay(key, rng):
    # one-way exchange with an extra 10 us of delay and exact priors:
    # the estimate departs from the true offset by exactly that delay
    offset = 5e-6
    slave = ClockState(offset=offset)
    tau_n, tau_m = 40e-6, 10e-6
    msg = make_sync(0, 1.0, ClockState(), key, rng)
    arrival = receive_sync(msg, 1.0 + tau_n + tau_m, slave, 0.0, key, rng)
    estimate = estimate_offset(1.0, tau_n, arrival.measured_time)
    assert estimate - offset == pytest.approx(-tau_m, abs=1e-15)


def test_layover_ideal_clock_exact(key, rng):
    arrival = ArrivalMeasurement(measured_time=1.0, noise_sigma=0.0,
                                 true_time=1.0, noise=0.0)
    _, transmit_true, actual = make_response(0, arrival, 100e-6, ClockState(),
                                             key, rng)
    assert actual == pytest.approx(100e-6, abs=1e-18)
    assert transmit_true == pytest.approx(1.0 + 100e-6, abs=1e-15)


def test_layover_rate_distortion(key, rng):
    arrival = ArrivalMeasurement(measured_time=1.0, noise_sigma=0.0,
                                 true_time=1.0, noise=0.0)
    slave = ClockState(offset=0.0, rate_error=1e-6, epoch=1.0)
    _, _, actual = make_response(0, arrival, 100e-6, slave, key, rng)
    assert actual - 100e-6 == pytest.approx(1e-10, rel=1e-3)


def test_layover_carries_measurement_noise(key, rng):
    # the slave schedules from its measured arrival, so a +5 ns measurement
    # error stretches the realized layover by +5 ns
    noise = 5e-9
    arrival = ArrivalMeasurement(measured_time=1.0 + noise, noise_sigma=1e-8,
                                 true_time=1.0, noise=noise)
    _, _, actual = make_response(0, arrival, 100e-6, ClockState(), key, rng)
    assert actual - 100e-6 == pytest.approx(noise, abs=1e-15)


def test_measure_rtt_subtraction():
    assert measure_rtt(1.000180, 1.0) == pytest.approx(180e-6, rel=1e-9)


def test_noiseless_round_trip_composition(key):
    rng = np.random.default_rng(3)
    master = MasterEndpoint(key, ClockState(), 0.0, rng)
    slave = SlaveEndpoint(key, ClockState(), 0.0, 100e-6, rng)
    tau_ab = tau_ba = 40e-6
    msg = master.send_sync(1.0)
    arrival = slave.receive_sync(msg, 1.0 + tau_ab)
    resp, transmit_true, actual = slave.respond(0, arrival)
    k, z_rtt = master.receive_response(resp, transmit_true + tau_ba)
    assert k == 0
    assert z_rtt == pytest.approx(tau_ab + actual + tau_ba, abs=1e-15)
    assert z_rtt == pytest.approx(180e-6, rel=1e-9)


def test_refine_delay_prior():
    assert refine_delay_prior(180e-6, 100e-6) == pytest.approx(40e-6)
    assert refine_delay_prior(80.34e-6, 0.0) == pytest.approx(40.17e-6)
    with pytest.raises(ModelInconsistencyError):
        refine_delay_prior(50e-6, 100e-6)


def test_refine_delay_prior_asymmetry_bias():
    # delaying only the reverse leg by 20 us biases the symmetric prior by
    # half of it
    z = 40e-6 + 100e-6 + 40e-6 + 20e-6
    assert refine_delay_prior(z, 100e-6) - 40e-6 == pytest.approx(10e-6, abs=1e-15)


def test_wire_layout(key, rng):
    msg = make_sync(7, 2.0, ClockState(), key, rng)
    blob = msg.serialize()
    (length,) = struct.unpack(">I", blob[:4])
    assert length == len(blob) - 4
    kind, index, t = struct.unpack(">BQd", blob[4:21])
    assert (kind, index, t) == (0x01, 7, 2.0)
    assert len(msg.payload_nonce) == 16 and len(msg.tag) == 32

    arrival = ArrivalMeasurement(measured_time=2.1, noise_sigma=0.0,
                                 true_time=2.1, noise=0.0)
    resp, _, _ = make_response(7, arrival, 100e-6, ClockState(), key, rng)
    blob = resp.serialize()
    kind, l, k, layover = struct.unpack(">BQQd", blob[4:29])
    assert (kind, l, k) == (0x02, 7, 7)
    assert layover == 100e-6


def test_duplicate_sync_index_rejected(key, rng):
    master = MasterEndpoint(key, ClockState(), 0.0, rng)
    master.send_sync(0.0, index=5)
    with pytest.raises(ProtocolError):
        master.send_sync(1.0, index=5)


def test_replayed_sync_rejected_at_slave(key, rng):
    master = MasterEndpoint(key, ClockState(), 0.0, rng)
    slave = SlaveEndpoint(key, ClockState(), 0.0, 100e-6, rng)
    msg = master.send_sync(0.0)
    slave.receive_sync(msg, 40e-6)
    with pytest.raises(ProtocolError):
        slave.receive_sync(msg, 50e-6)


def test_replayed_response_rejected_at_master(key, rng):
    master = MasterEndpoint(key, ClockState(), 0.0, rng)
    slave = SlaveEndpoint(key, ClockState(), 0.0, 100e-6, rng)
    msg = master.send_sync(0.0)
    arrival = slave.receive_sync(msg, 40e-6)
    resp, transmit_true, _ = slave.respond(0, arrival)
    master.receive_response(resp, transmit_true + 40e-6)
    with pytest.raises(ProtocolError):
        master.receive_response(resp, transmit_true + 50e-6)


def test_response_map_permutation(key, rng):
    response_map = {0: 10, 1: 11}
    master = MasterEndpoint(key, ClockState(), 0.0, rng, response_map=response_map)
    slave = SlaveEndpoint(key, ClockState(), 0.0, 100e-6, rng,
                          response_map=response_map)
    msg = master.send_sync(0.0)
    arrival = slave.receive_sync(msg, 40e-6)
    resp, transmit_true, _ = slave.respond(0, arrival)
    assert resp.response_index == 10
    k, _ = master.receive_response(resp, transmit_true + 40e-6)
    assert k == 0


def test_mismatched_response_index_rejected(key, rng):
    master = MasterEndpoint(key, ClockState(), 0.0, rng)
    slave = SlaveEndpoint(key, ClockState(), 0.0, 100e-6, rng,
                          response_map={0: 42})
    msg = master.send_sync(0.0)
    arrival = slave.receive_sync(msg, 40e-6)
    resp, transmit_true, _ = slave.respond(0, arrival)
    with pytest.raises(ProtocolError):
        master.receive_response(resp, transmit_true + 40e-6)


@given(st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=40, unique=True))
@settings(max_examples=30)
def test_feature_time_bijection(gaps):
    # strictly increasing transmit times against strictly increasing indices
    key = SessionKey.from_rng(np.random.default_rng(4))
    master = MasterEndpoint(key, ClockState(), 0.0, np.random.default_rng(5))
    t = 0.0
    times = {}
    for gap in gaps:
        t += gap
        msg = master.send_sync(t)
        times[msg.feature.index] = msg.feature.transmit_time_master_clock
    values = list(times.values())
    assert sorted(values) == values
    assert len(set(values)) == len(values)


def test_session_key_validation():
    with pytest.raises(ValueError):
        SessionKey(b"short")
