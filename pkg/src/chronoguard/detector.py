"""Master-side attack detection on round-trip-time measurements.

Two detectors coexist on purpose. The per-exchange formal check raises an
alarm when a single measured RTT strays from the calibrated reference by
more than alert_limit - margin, two-sided; it is the device the security
argument reasons about. The operational batch test averages a decision
epoch's RTT measurements and compares the mean against a one-sided threshold
chosen empirically for a target detection probability; a compliant attacker
can only add delay, hence one-sided.

Calibration (reference mean and spread) is produced by Monte Carlo over the
channel model, stands in for a secure measurement campaign, and is frozen
during operation. Thresholds come from empirical order statistics, not
Gaussian fits: the RTT distribution's upper tail is heavier than normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import TwoWayChannel, analytic_rtt_moments, sample_rtt_batch_means

__all__ = [
    "DetectorConfig",
    "CalibrationTable",
    "Decision",
    "SecurityBudget",
    "ConfigurationError",
    "calibrate",
    "formal_check",
    "batch_test",
    "choose_threshold",
    "threshold_from_h1_stats",
    "estimate_pf",
    "false_alarm_curve",
    "practical_budget_report",
]


class ConfigurationError(ValueError):
    """Detector inputs inconsistent with the configured decision rule."""


@dataclass(frozen=True)
class DetectorConfig:
    """Decision-rule parameters.

    alert_limit is the synchronization error magnitude that must never pass
    silently; margin is the detection headroom below it. threshold is the
    one-sided batch-mean alarm level and must exceed the calibrated RTT mean.
    """

    alert_limit: float
    margin: float
    batch_size: int = 1
    threshold: float = math.inf

    def __post_init__(self) -> None:
        if not 0.0 < self.margin < self.alert_limit:
            raise ValueError("need 0 < margin < alert_limit")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class CalibrationTable:
    """Frozen reference statistics of the benign RTT distribution."""

    tau_bar_rtt: float
    sigma_bar_rtt: float
    sigma_of_mean: dict[int, float]
    trials_used: int


@dataclass(frozen=True)
class Decision:
    statistic: float
    alarm: bool
    epoch: int = 0


@dataclass(frozen=True)
class SecurityBudget:
    """Split of the alert limit between natural drift and adversarial delay."""

    alert_limit: float
    natural_bound: float
    p_d_target: float
    exceedance_prob: float

    def __post_init__(self) -> None:
        if not 0.0 < self.natural_bound < self.alert_limit:
            raise ValueError("need 0 < natural_bound < alert_limit")
        if not 0.0 < self.p_d_target < 1.0:
            raise ValueError("p_d_target must lie in (0, 1)")

    @property
    def adversarial_bound(self) -> float:
        return self.alert_limit - self.natural_bound


def calibrate(
    channel: TwoWayChannel,
    layover: float,
    trials: int,
    rng: np.random.Generator,
    batch_sizes: tuple[int, ...] = (10,),
    cross_check_tol: float = 0.05,
) -> CalibrationTable:
    """Empirical RTT mean/spread from an attack-free Monte Carlo campaign.

    Also records the spread of batch means for each requested batch size and
    cross-checks the single-exchange moments against the closed-form values
    (a deliberately independent route through the same model).
    """
    if trials < 10_000:
        raise ValueError("calibration needs at least 1e4 trials")
    rtts = sample_rtt_batch_means(channel, 1, trials, rng, layover=layover)
    mean = float(rtts.mean())
    std = float(rtts.std())
    sigma_of_mean: dict[int, float] = {}
    for m in batch_sizes:
        n_batches = trials // m
        if n_batches < 2:
            raise ValueError(f"too few trials to calibrate batch size {m}")
        batch_means = rtts[: n_batches * m].reshape(n_batches, m).mean(axis=1)
        sigma_of_mean[int(m)] = float(batch_means.std())
    ana_mean, ana_std = analytic_rtt_moments(channel.forward, channel.reverse, layover)
    if ana_std > 0.0:
        if abs(mean - ana_mean) > cross_check_tol * max(ana_mean, ana_std):
            raise ConfigurationError(
                f"calibrated mean {mean} disagrees with analytic {ana_mean}")
        if abs(std - ana_std) > cross_check_tol * ana_std:
            raise ConfigurationError(
                f"calibrated std {std} disagrees with analytic {ana_std}")
    return CalibrationTable(tau_bar_rtt=mean, sigma_bar_rtt=std,
                            sigma_of_mean=sigma_of_mean, trials_used=trials)


def formal_check(z_rtt: float, cal: CalibrationTable, cfg: DetectorConfig,
                 epoch: int = 0) -> Decision:
    """Per-exchange two-sided check against the calibrated reference.

    Alarm iff |z_rtt - tau_bar_rtt| strictly exceeds alert_limit - margin.
    """
    deviation = abs(z_rtt - cal.tau_bar_rtt)
    return Decision(statistic=z_rtt, alarm=deviation > cfg.alert_limit - cfg.margin,
                    epoch=epoch)


def batch_test(rtts, cfg: DetectorConfig, epoch: int = 0) -> Decision:
    """One-sided test on the epoch's empirical mean RTT.

    Alarm iff mean strictly exceeds the configured threshold. The sample
    count must equal the configured batch size.
    """
    rtts = np.asarray(rtts, dtype=float)
    if rtts.shape != (cfg.batch_size,):
        raise ConfigurationError(
            f"expected {cfg.batch_size} samples per epoch, got {rtts.shape}")
    statistic = float(rtts.mean())
    return Decision(statistic=statistic, alarm=statistic > cfg.threshold, epoch=epoch)


def threshold_from_h1_stats(h1_stats: np.ndarray, p_d_target: float) -> float:
    """Largest threshold whose empirical detection probability meets the target.

    With n attacked-epoch statistics that is the ceil((1 - p_d) * n)-th
    smallest order statistic.
    """
    n = len(h1_stats)
    k = max(1, math.ceil((1.0 - p_d_target) * n))
    return float(np.partition(np.asarray(h1_stats, dtype=float), k - 1)[k - 1])


def choose_threshold(
    channel: TwoWayChannel,
    batch_size: int,
    attack_shift: float,
    p_d_target: float,
    trials: int,
    rng: np.random.Generator,
    layover: float = 0.0,
) -> float:
    """Simulate attacked epochs and select the batch-test threshold.

    Under attack every RTT carries the fixed extra delay, so the attacked
    statistic is the benign one shifted by attack_shift.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    h1 = sample_rtt_batch_means(channel, batch_size, trials, rng, layover=layover)
    h1 += attack_shift
    return threshold_from_h1_stats(h1, p_d_target)


def estimate_pf(
    channel: TwoWayChannel,
    batch_size: int,
    threshold: float,
    trials: int,
    rng: np.random.Generator,
    layover: float = 0.0,
) -> float:
    """Benign-epoch Monte Carlo alarm frequency at the given threshold."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    h0 = sample_rtt_batch_means(channel, batch_size, trials, rng, layover=layover)
    return float(np.count_nonzero(h0 > threshold) / trials)


def false_alarm_curve(
    channel: TwoWayChannel,
    batch_sizes,
    attack_shift: float,
    p_d_target: float,
    trials: int,
    rng: np.random.Generator,
    layover: float = 0.0,
) -> list[dict]:
    """Threshold selection plus false-alarm estimation across batch sizes.

    Returns one row per batch size with the chosen threshold, the empirical
    detection probability at it, and the benign alarm frequency, using
    independent campaigns for selection and evaluation.
    """
    rows = []
    for m in batch_sizes:
        h1 = sample_rtt_batch_means(channel, m, trials, rng, layover=layover)
        h1 += attack_shift
        lam = threshold_from_h1_stats(h1, p_d_target)
        pd_hat = float(np.count_nonzero(h1 > lam) / trials)
        del h1
        pf_hat = estimate_pf(channel, m, lam, trials, rng, layover=layover)
        rows.append({
            "batch_size": int(m),
            "threshold_seconds": lam,
            "pd_empirical": pd_hat,
            "pf_empirical": pf_hat,
            "trials": int(trials),
        })
    return rows


def practical_budget_report(
    channel: TwoWayChannel,
    cal: CalibrationTable,
    budget: SecurityBudget,
    batch_size: int,
    threshold_offset: float,
    trials: int,
    rng: np.random.Generator,
    layover: float = 0.0,
) -> tuple[float, float]:
    """Missed-detection and false-alarm rates for an offset-above-mean threshold.

    The attacked epochs carry the budget's full adversarial delay; misses are
    attacked epochs whose statistic stays at or below the threshold.
    """
    threshold = cal.tau_bar_rtt + threshold_offset
    h1 = sample_rtt_batch_means(channel, batch_size, trials, rng, layover=layover)
    h1 += budget.adversarial_bound
    p_missed = float(np.count_nonzero(h1 <= threshold) / trials)
    del h1
    p_f = estimate_pf(channel, batch_size, threshold, trials, rng, layover=layover)
    return p_missed, p_f
