import math

import numpy as np
import pytest

from chronoguard.channel import (
    DelaySample,
    PathDelayModel,
    RouterHopModel,
    TwoWayChannel,
    analytic_rtt_moments,
    sample_hop_delay,
    sample_path_delay,
    sample_path_delays,
    sample_rtt,
    sample_rtt_batch_means,
)

T_MAX = 1542 * 8 / 2**30


def paper_leg(hops=10, rho=0.3, floor=0.0):
    return PathDelayModel(hops=hops, hop=RouterHopModel(idle_prob=rho), fixed_floor=floor)


def quadrature_hop_moments(rho, t_max, n_grid=200_001):
    """Independent oracle: numerical integration of the mixture density."""
    x = np.linspace(0.0, t_max, n_grid)
    density = (1.0 - rho) / t_max
    mean = np.trapz(x * density, x)          # the point mass at zero adds nothing
    second = np.trapz(x * x * density, x)
    return mean, second - mean**2


def test_t_max_constant():
    assert RouterHopModel(idle_prob=0.3).t_max == 12336 / 2**30
    assert RouterHopModel(idle_prob=0.3).t_max == pytest.approx(11.49e-6, rel=1e-3)


def test_hop_moments_match_quadrature_oracle():
    hop = RouterHopModel(idle_prob=0.3)
    mean, var = quadrature_hop_moments(0.3, hop.t_max)
    assert hop.mean == pytest.approx(mean, rel=1e-6)
    assert hop.variance == pytest.approx(var, rel=1e-4)


def test_fully_idle_hop_is_free():
    hop = RouterHopModel(idle_prob=1.0)
    rng = np.random.default_rng(0)
    assert all(sample_hop_delay(hop, rng) == 0.0 for _ in range(100))


def test_busy_hop_mean_is_half_t_max():
    leg = PathDelayModel(hops=1, hop=RouterHopModel(idle_prob=0.0))
    rng = np.random.default_rng(1)
    draws = sample_path_delays(leg, 1_000_000, rng)
    assert draws.mean() == pytest.approx(T_MAX / 2, rel=0.01)


def test_mixture_hop_mean():
    leg = PathDelayModel(hops=1, hop=RouterHopModel(idle_prob=0.3))
    rng = np.random.default_rng(2)
    draws = sample_path_delays(leg, 1_000_000, rng)
    assert draws.mean() == pytest.approx(0.7 * T_MAX / 2, rel=0.01)
    assert draws.mean() == pytest.approx(4.02e-6, rel=0.01)


def test_deterministic_path_is_floor():
    leg = PathDelayModel(hops=1, hop=RouterHopModel(idle_prob=1.0), fixed_floor=40e-6)
    rng = np.random.default_rng(3)
    assert sample_path_delay(leg, rng) == 40e-6


def test_one_leg_mean():
    rng = np.random.default_rng(4)
    draws = sample_path_delays(paper_leg(), 1_000_000, rng)
    assert draws.mean() == pytest.approx(40.17e-6, rel=0.01)


def test_rtt_std_reproduces_reference():
    chan = TwoWayChannel(forward=paper_leg(), reverse=paper_leg())
    rng = np.random.default_rng(5)
    rtts = sample_rtt(chan, 1_000_000, rng)
    assert rtts.std() == pytest.approx(17.09e-6, rel=0.03)


def test_hop_moments_within_three_standard_errors():
    leg = PathDelayModel(hops=1, hop=RouterHopModel(idle_prob=0.3))
    rng = np.random.default_rng(6)
    n = 1_000_000
    draws = sample_path_delays(leg, n, rng)
    hop = leg.hop
    se_mean = math.sqrt(hop.variance / n)
    assert abs(draws.mean() - hop.mean) < 3 * se_mean
    # fourth-moment standard error for the sample variance
    centered = draws - hop.mean
    mu4 = np.mean(centered**4)
    se_var = math.sqrt((mu4 - hop.variance**2) / n)
    assert abs(draws.var() - hop.variance) < 3 * se_var


def test_path_delay_right_skewed():
    rng = np.random.default_rng(7)
    draws = sample_path_delays(paper_leg(), 200_000, rng)
    centered = draws - draws.mean()
    skew = np.mean(centered**3) / draws.std() ** 3
    assert skew > 0.0


def test_rtt_samples_uncorrelated():
    chan = TwoWayChannel(forward=paper_leg(), reverse=paper_leg())
    rng = np.random.default_rng(8)
    n = 100_000
    rtts = sample_rtt(chan, n, rng)
    centered = rtts - rtts.mean()
    lag1 = np.dot(centered[:-1], centered[1:]) / np.dot(centered, centered)
    assert abs(lag1) < 3.0 / math.sqrt(n)


def test_batch_mean_scaling():
    chan = TwoWayChannel(forward=paper_leg(), reverse=paper_leg())
    _, sigma1 = analytic_rtt_moments(chan.forward, chan.reverse)
    rng = np.random.default_rng(9)
    for m in (10, 80, 160):
        means = sample_rtt_batch_means(chan, m, 200_000 // m * 4, rng)
        assert means.std() == pytest.approx(sigma1 / math.sqrt(m), rel=0.05)


def test_analytic_rtt_moments_reference_values():
    chan = TwoWayChannel(forward=paper_leg(), reverse=paper_leg())
    mean, std = analytic_rtt_moments(chan.forward, chan.reverse)
    assert mean == pytest.approx(80.43e-6, abs=0.02e-6)
    assert std == pytest.approx(17.105e-6, abs=0.01e-6)
    # batch-of-ten spread, closed form against the reference number
    assert std / math.sqrt(10) == pytest.approx(5.40e-6, abs=0.02e-6)


def test_analytic_rtt_moments_deterministic_channel():
    leg = PathDelayModel(hops=1, hop=RouterHopModel(idle_prob=1.0))
    mean, std = analytic_rtt_moments(leg, leg, layover=100e-6)
    assert mean == 100e-6
    assert std == 0.0


def test_batch_sampler_agrees_with_plain_sampler():
    # dual route: the float32 batch kernel against the float64 sampler
    chan = TwoWayChannel(forward=paper_leg(), reverse=paper_leg())
    rng1 = np.random.default_rng(10)
    rng2 = np.random.default_rng(11)
    means = sample_rtt_batch_means(chan, 1, 400_000, rng1)
    plain = sample_rtt(chan, 400_000, rng2)
    assert means.mean() == pytest.approx(plain.mean(), rel=0.005)
    assert means.std() == pytest.approx(plain.std(), rel=0.01)


def test_batch_sampler_asymmetric_legs():
    chan = TwoWayChannel(forward=paper_leg(rho=0.3), reverse=paper_leg(rho=0.6))
    mean, std = analytic_rtt_moments(chan.forward, chan.reverse)
    rng = np.random.default_rng(12)
    means = sample_rtt_batch_means(chan, 4, 100_000, rng)
    assert means.mean() == pytest.approx(mean, rel=0.01)
    assert means.std() == pytest.approx(std / 2.0, rel=0.05)


def test_delay_sample_physicality():
    assert DelaySample(natural=4e-5, adversarial=-1e-5).total == pytest.approx(3e-5)
    with pytest.raises(ValueError):
        DelaySample(natural=1e-5, adversarial=-2e-5).require_physical()


def test_validation():
    with pytest.raises(ValueError):
        RouterHopModel(idle_prob=1.5)
    with pytest.raises(ValueError):
        PathDelayModel(hops=0, hop=RouterHopModel(idle_prob=0.5))
    with pytest.raises(ValueError):
        PathDelayModel(hops=1, hop=RouterHopModel(idle_prob=0.5), fixed_floor=-1.0)
