"""Scenario files, result bundles, and deterministic parallel orchestration.

Scenario files are TOML with one section per subsystem. Physical quantities
carry their unit in the key name (``*_seconds``, ``*_bps``); unknown keys are
rejected so a typo cannot silently fall back to a default. Result bundles
are a directory of CSV files plus one ``summary.json`` whose scalar metrics
suffice to evaluate a run, along with the seed, the source revision, and the
wall time (the only field allowed to differ between identical runs).
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import time
import tomllib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adversary import FeasibilityRules, strategy_from_config
from .channel import PathDelayModel, RouterHopModel, TwoWayChannel
from .detector import CalibrationTable, DetectorConfig
from .scenarios import ProtocolParams, RunReport, Scenario
from .timebase import ClockState

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioFileError",
    "parse_scenario_file",
    "parse_scenario_text",
    "serialize_scenario",
    "emit_histogram",
    "emit_csv",
    "write_summary",
    "report_to_csv",
    "resolve_workers",
    "make_pool",
    "git_describe",
]

SCHEMA_VERSION = 1
THREADS_ENV = "CHRONOGUARD_THREADS"


class ScenarioFileError(ValueError):
    """Malformed or inconsistent scenario file."""


_TOP_KEYS = {"schema_version", "name", "seed", "clock", "channel", "protocol",
             "adversary", "detector", "calibration", "run"}
_CLOCK_KEYS = {"offset_seconds", "rate_error", "random_walk_intensity_s2_per_s"}
_LEG_KEYS = {"hops", "idle_prob", "service_rate_bps", "packet_bits",
             "fixed_floor_seconds"}
_PROTOCOL_KEYS = {"noise_sigma_seconds", "intended_layover_seconds",
                  "prior_tau_ab_seconds", "prior_tau_ba_seconds"}
_ADVERSARY_KEYS = {"kind", "delay_seconds", "jitter_seconds", "advance_seconds",
                   "saving_seconds", "calibration_sigma_seconds",
                   "alert_limit_seconds", "sync_predictable",
                   "response_predictable", "shortcut_available_seconds"}
_DETECTOR_KEYS = {"alert_limit_seconds", "margin_seconds", "batch_size",
                  "threshold_seconds"}
_CALIBRATION_KEYS = {"tau_bar_rtt_seconds", "sigma_bar_rtt_seconds"}
_RUN_KEYS = {"epochs", "exchanges_per_epoch", "exchange_period_seconds",
             "calibration_trials", "use_formal_check", "refine_priors",
             "apply_corrections"}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ScenarioFileError(f"unknown key(s) {sorted(unknown)} in [{where}]")


def _parse_leg(section: dict, where: str) -> PathDelayModel:
    _check_keys(section, _LEG_KEYS, where)
    hop = RouterHopModel(
        idle_prob=float(section.get("idle_prob", 0.3)),
        service_rate_bps=float(section.get("service_rate_bps", 2.0**30)),
        packet_bits=float(section.get("packet_bits", 1542 * 8)),
    )
    return PathDelayModel(hops=int(section.get("hops", 10)), hop=hop,
                          fixed_floor=float(section.get("fixed_floor_seconds", 0.0)))


def parse_scenario_text(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioFileError(f"scenario parse error: {exc}") from exc
    _check_keys(doc, _TOP_KEYS, "top level")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioFileError(f"unsupported schema_version {version!r}")
    if "name" not in doc:
        raise ScenarioFileError("scenario needs a name")

    clock_sec = doc.get("clock", {})
    _check_keys(clock_sec, _CLOCK_KEYS, "clock")
    clock = ClockState(
        offset=float(clock_sec.get("offset_seconds", 0.0)),
        rate_error=float(clock_sec.get("rate_error", 0.0)),
        rw_intensity=float(clock_sec.get("random_walk_intensity_s2_per_s", 0.0)),
    )

    chan_sec = doc.get("channel", {})
    _check_keys(chan_sec, {"forward", "reverse"}, "channel")
    if "forward" not in chan_sec or "reverse" not in chan_sec:
        raise ScenarioFileError("channel needs [channel.forward] and [channel.reverse]")
    channel = TwoWayChannel(forward=_parse_leg(chan_sec["forward"], "channel.forward"),
                            reverse=_parse_leg(chan_sec["reverse"], "channel.reverse"))

    proto_sec = doc.get("protocol", {})
    _check_keys(proto_sec, _PROTOCOL_KEYS, "protocol")
    protocol = ProtocolParams(
        noise_sigma=float(proto_sec.get("noise_sigma_seconds", 0.0)),
        intended_layover=float(proto_sec.get("intended_layover_seconds", 100e-6)),
        prior_tau_ab=(float(proto_sec["prior_tau_ab_seconds"])
                      if "prior_tau_ab_seconds" in proto_sec else None),
        prior_tau_ba=(float(proto_sec["prior_tau_ba_seconds"])
                      if "prior_tau_ba_seconds" in proto_sec else None),
    )

    adv_sec = dict(doc.get("adversary", {"kind": "none"}))
    _check_keys(adv_sec, _ADVERSARY_KEYS, "adversary")
    rules = FeasibilityRules(
        sync_predictable=bool(adv_sec.pop("sync_predictable", False)),
        response_predictable=bool(adv_sec.pop("response_predictable", False)),
        shortcut_available=float(adv_sec.pop("shortcut_available_seconds", 0.0)),
    )
    strategy = strategy_from_config(adv_sec.pop("kind", "none"), adv_sec)

    det_sec = doc.get("detector", {})
    _check_keys(det_sec, _DETECTOR_KEYS, "detector")
    detector = DetectorConfig(
        alert_limit=float(det_sec.get("alert_limit_seconds", 100e-6)),
        margin=float(det_sec.get("margin_seconds", 10e-6)),
        batch_size=int(det_sec.get("batch_size", 1)),
        threshold=float(det_sec.get("threshold_seconds", math.inf)),
    )

    calibration = None
    if "calibration" in doc:
        cal_sec = doc["calibration"]
        _check_keys(cal_sec, _CALIBRATION_KEYS, "calibration")
        calibration = CalibrationTable(
            tau_bar_rtt=float(cal_sec["tau_bar_rtt_seconds"]),
            sigma_bar_rtt=float(cal_sec.get("sigma_bar_rtt_seconds", 0.0)),
            sigma_of_mean={}, trials_used=0)

    run_sec = doc.get("run", {})
    _check_keys(run_sec, _RUN_KEYS, "run")

    return Scenario(
        name=str(doc["name"]),
        channel=channel,
        protocol=protocol,
        detector=detector,
        slave_clock=clock,
        strategy=strategy,
        rules=rules,
        epochs=int(run_sec.get("epochs", 1)),
        exchanges_per_epoch=int(run_sec.get("exchanges_per_epoch", 100)),
        seed=int(doc.get("seed", 0)),
        exchange_period=float(run_sec.get("exchange_period_seconds", 1e-3)),
        calibration_trials=int(run_sec.get("calibration_trials", 100_000)),
        calibration_override=calibration,
        use_formal_check=bool(run_sec.get("use_formal_check", True)),
        refine_priors=bool(run_sec.get("refine_priors", False)),
        apply_corrections=bool(run_sec.get("apply_corrections", False)),
    )


def parse_scenario_file(path) -> Scenario:
    text = Path(path).read_text()
    try:
        return parse_scenario_text(text)
    except ScenarioFileError as exc:
        raise ScenarioFileError(f"{path}: {exc}") from exc


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    return '"' + str(value) + '"'


def _leg_lines(leg: PathDelayModel) -> list[str]:
    return [
        f"hops = {leg.hops}",
        f"idle_prob = {_fmt(leg.hop.idle_prob)}",
        f"service_rate_bps = {_fmt(leg.hop.service_rate_bps)}",
        f"packet_bits = {_fmt(leg.hop.packet_bits)}",
        f"fixed_floor_seconds = {_fmt(leg.fixed_floor)}",
    ]


def serialize_scenario(scenario: Scenario) -> str:
    """Canonical TOML form; parse(serialize(s)) reproduces s field by field."""
    lines = [
        f"schema_version = {SCHEMA_VERSION}",
        f"name = {_fmt(scenario.name)}",
        f"seed = {scenario.seed}",
        "",
        "[clock]",
        f"offset_seconds = {_fmt(scenario.slave_clock.offset)}",
        f"rate_error = {_fmt(scenario.slave_clock.rate_error)}",
        f"random_walk_intensity_s2_per_s = {_fmt(scenario.slave_clock.rw_intensity)}",
        "",
        "[channel.forward]",
        *_leg_lines(scenario.channel.forward),
        "",
        "[channel.reverse]",
        *_leg_lines(scenario.channel.reverse),
        "",
        "[protocol]",
        f"noise_sigma_seconds = {_fmt(scenario.protocol.noise_sigma)}",
        f"intended_layover_seconds = {_fmt(scenario.protocol.intended_layover)}",
    ]
    if scenario.protocol.prior_tau_ab is not None:
        lines.append(f"prior_tau_ab_seconds = {_fmt(scenario.protocol.prior_tau_ab)}")
    if scenario.protocol.prior_tau_ba is not None:
        lines.append(f"prior_tau_ba_seconds = {_fmt(scenario.protocol.prior_tau_ba)}")

    lines += ["", "[adversary]", f"kind = {_fmt(scenario.strategy.kind)}"]
    strat = scenario.strategy
    for attr, key in (("delay", "delay_seconds"), ("jitter", "jitter_seconds"),
                      ("advance", "advance_seconds"), ("saving", "saving_seconds"),
                      ("calibration_sigma", "calibration_sigma_seconds"),
                      ("alert_limit", "alert_limit_seconds")):
        if hasattr(strat, attr):
            lines.append(f"{key} = {_fmt(getattr(strat, attr))}")
    rules = scenario.rules
    lines += [
        f"sync_predictable = {_fmt(rules.sync_predictable)}",
        f"response_predictable = {_fmt(rules.response_predictable)}",
        f"shortcut_available_seconds = {_fmt(rules.shortcut_available)}",
        "",
        "[detector]",
        f"alert_limit_seconds = {_fmt(scenario.detector.alert_limit)}",
        f"margin_seconds = {_fmt(scenario.detector.margin)}",
        f"batch_size = {scenario.detector.batch_size}",
    ]
    if math.isfinite(scenario.detector.threshold):
        lines.append(f"threshold_seconds = {_fmt(scenario.detector.threshold)}")
    if scenario.calibration_override is not None:
        cal = scenario.calibration_override
        lines += ["", "[calibration]",
                  f"tau_bar_rtt_seconds = {_fmt(cal.tau_bar_rtt)}",
                  f"sigma_bar_rtt_seconds = {_fmt(cal.sigma_bar_rtt)}"]
    lines += [
        "",
        "[run]",
        f"epochs = {scenario.epochs}",
        f"exchanges_per_epoch = {scenario.exchanges_per_epoch}",
        f"exchange_period_seconds = {_fmt(scenario.exchange_period)}",
        f"calibration_trials = {scenario.calibration_trials}",
        f"use_formal_check = {_fmt(scenario.use_formal_check)}",
        f"refine_priors = {_fmt(scenario.refine_priors)}",
        f"apply_corrections = {_fmt(scenario.apply_corrections)}",
        "",
    ]
    return "\n".join(lines)


# --- result emission ----------------------------------------------------------

def emit_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_histogram(samples, bins: int, path) -> None:
    """Histogram CSV with deterministic equal-width bins over [min, max].

    Columns are bin_left_seconds, bin_right_seconds, count; the last bin is
    right-closed, matching numpy's convention.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("cannot histogram an empty sample set")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts, edges = np.histogram(samples, bins=bins)
    emit_csv(path, ["bin_left_seconds", "bin_right_seconds", "count"],
             [(edges[i], edges[i + 1], int(counts[i])) for i in range(len(counts))])


def emit_histogram_arrays(hist: tuple[np.ndarray, np.ndarray], path) -> None:
    counts, edges = hist
    emit_csv(path, ["bin_left_seconds", "bin_right_seconds", "count"],
             [(float(edges[i]), float(edges[i + 1]), int(counts[i]))
              for i in range(len(counts))])


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_summary(summary: dict, path, wall_time_seconds: float | None = None) -> None:
    """Canonical JSON emission: sorted keys, fixed layout.

    Two runs of the same (scenario, seed) produce byte-identical files apart
    from the wall_time_seconds field.
    """
    doc = dict(summary)
    doc["git_describe"] = git_describe()
    if wall_time_seconds is not None:
        doc["wall_time_seconds"] = wall_time_seconds
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def report_to_csv(report: RunReport, path) -> None:
    """Per-exchange ground-truth transcript of a scenario run."""
    header = ["index", "t_a_k", "tau_ab_n", "tau_ab_m", "w_ab", "arrival_b_true",
              "z_b", "offset_true", "prior_tau_ab", "estimate", "est_error",
              "compromised", "actual_layover", "transmit_b_true", "tau_ba_n",
              "tau_ba_m", "w_ba", "arrival_a_true", "z_rtt", "formal_alarm"]
    rows = [(e.index, e.t_a_k, e.tau_ab_n, e.tau_ab_m, e.w_ab, e.arrival_b_true,
             e.z_b, e.offset_true, e.prior_tau_ab, e.estimate, e.est_error,
             int(e.compromised), e.actual_layover, e.transmit_b_true, e.tau_ba_n,
             e.tau_ba_m, e.w_ba, e.arrival_a_true, e.z_rtt, int(e.formal_alarm))
            for e in report.exchanges]
    emit_csv(path, header, rows)


# --- parallel orchestration ---------------------------------------------------

def resolve_workers(requested: int | None = None) -> int:
    """Worker count: explicit request, capped by the environment variable."""
    cap = os.environ.get(THREADS_ENV)
    cap = int(cap) if cap else os.cpu_count() or 1
    if requested is None:
        requested = cap
    return max(1, min(requested, cap))


class make_pool:
    """Context manager yielding a process pool, or None for serial runs."""

    def __init__(self, workers: int) -> None:
        self.workers = workers
        self._pool = None

    def __enter__(self):
        if self.workers <= 1:
            return None
        self._pool = ProcessPoolExecutor(max_workers=self.workers)
        return self._pool

    def __exit__(self, *exc) -> None:
        if self._pool is not None:
            self._pool.shutdown()


class Stopwatch:
    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc) -> None:
        self.elapsed = time.perf_counter() - self._t0
