"""Command-line entry point.

Subcommands mirror the scenario catalog: ``calibrate``, ``campaign``,
``scenario`` (run a scenario file), ``necessity``, ``sufficiency``,
``one-way``, and ``codephase-demo``. Every run writes a result bundle (CSV
files plus summary.json) into --out-dir. With --check the summary metrics
are validated against their reference bands and a failure exits with code 2;
scenario or configuration errors exit with code 1.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from . import scenarios as sc
from .adversary import FixedSyncDelay
from .detector import calibrate
from .harness import (
    ScenarioFileError,
    Stopwatch,
    emit_csv,
    emit_histogram,
    emit_histogram_arrays,
    make_pool,
    parse_scenario_file,
    report_to_csv,
    resolve_workers,
    write_summary,
)
from .seeding import substream

EXIT_OK = 0
EXIT_SCENARIO_ERROR = 1
EXIT_CHECK_FAILED = 2


def _check_report(checks: list[tuple[str, bool]]) -> bool:
    ok = True
    for name, passed in checks:
        print(f"  [{'PASS' if passed else 'FAIL'}] {name}")
        ok = ok and passed
    return ok


def _cmd_calibrate(args) -> int:
    chan = sc.paper_channel()
    layover = 0.0
    if args.scenario:
        scenario = parse_scenario_file(args.scenario)
        chan = scenario.channel
        layover = scenario.protocol.intended_layover
    rng = substream(args.seed, 1)
    with Stopwatch() as watch:
        cal = calibrate(chan, layover, args.trials, rng, batch_sizes=(10,))
        samples = sc.sample_rtt_batch_means(chan, 1, min(args.trials, 200_000),
                                            substream(args.seed, 1, 1), layover=layover)
    out = Path(args.out_dir)
    emit_histogram(samples, 60, out / "rtt_histogram.csv")
    batches = samples[: len(samples) // 10 * 10].reshape(-1, 10).mean(axis=1)
    emit_histogram(batches, 60, out / "batch10_histogram.csv")
    summary = {
        "command": "calibrate",
        "seed": args.seed,
        "trials": args.trials,
        "tau_bar_rtt_seconds": cal.tau_bar_rtt,
        "sigma_bar_rtt_seconds": cal.sigma_bar_rtt,
        "sigma_of_mean_seconds": {str(k): v for k, v in cal.sigma_of_mean.items()},
    }
    write_summary(summary, out / "summary.json", wall_time_seconds=watch.elapsed)
    print(f"calibration: mean {cal.tau_bar_rtt * 1e6:.3f} us, "
          f"std {cal.sigma_bar_rtt * 1e6:.3f} us ({watch.elapsed:.1f} s)")
    if args.check:
        checks = [
            ("rtt mean within 0.5 us of 80.34 us",
             abs(cal.tau_bar_rtt - 80.34e-6) <= 0.5e-6),
            ("rtt std within 0.5 us of 17.09 us",
             abs(cal.sigma_bar_rtt - 17.09e-6) <= 0.5e-6),
            ("batch-of-10 std within 0.2 us of 5.41 us",
             abs(cal.sigma_of_mean[10] - 5.41e-6) <= 0.2e-6),
        ]
        if not _check_report(checks):
            return EXIT_CHECK_FAILED
    return EXIT_OK


def _campaign_checks(result: sc.CampaignResult) -> list[tuple[str, bool]]:
    cal = result.calibration
    curve_pf = [row["pf_empirical"] for row in result.curve]
    tail_rows = [row for row in result.curve if row["batch_size"] >= 160]
    return [
        ("rtt mean within 0.5 us of 80.34 us", abs(cal.tau_bar_rtt - 80.34e-6) <= 0.5e-6),
        ("rtt std within 0.5 us of 17.09 us", abs(cal.sigma_bar_rtt - 17.09e-6) <= 0.5e-6),
        ("batch-of-10 std within 0.2 us of 5.41 us",
         abs(cal.sigma_of_mean[10] - 5.41e-6) <= 0.2e-6),
        ("threshold within 0.5 us of 84.53 us",
         abs(result.threshold - 84.53e-6) <= 0.5e-6),
        ("false-alarm rate in [1.0%, 2.2%]",
         0.010 <= result.pf_at_threshold <= 0.022),
        ("false-alarm curve non-increasing",
         all(a >= b for a, b in zip(curve_pf, curve_pf[1:]))),
        ("<= 5 false alarms per 1e6 epochs at batch sizes 160 and 200",
         all(row["pf_empirical"] * row["trials"] <= 5 for row in tail_rows)),
        ("practical missed-detection rate in [2e-5, 5e-4]",
         2e-5 <= result.p_missed_practical <= 5e-4),
        ("practical false-alarm rate <= 1e-4", result.pf_practical <= 1e-4),
    ]


def _cmd_campaign(args) -> int:
    config = sc.CampaignConfig(seed=args.seed, trials=args.trials,
                               calibration_trials=args.trials,
                               workers=resolve_workers(args.workers))
    out = Path(args.out_dir)
    with Stopwatch() as watch:
        with make_pool(config.workers) as pool:
            result = sc.run_simulation_campaign(config, pool=pool)
    emit_histogram_arrays(result.rtt_histogram, out / "rtt_histogram.csv")
    emit_histogram_arrays(result.batch_histogram, out / "batch10_histogram.csv")
    emit_histogram_arrays(result.h0_histogram, out / "h0_statistic_histogram.csv")
    emit_histogram_arrays(result.h1_histogram, out / "h1_statistic_histogram.csv")
    emit_csv(out / "false_alarm_curve.csv",
             ["M", "lambda_seconds", "pd_empirical", "pf_empirical", "trials", "seed"],
             [(row["batch_size"], row["threshold_seconds"], row["pd_empirical"],
               row["pf_empirical"], row["trials"], config.seed)
              for row in result.curve])
    write_summary(result.summary(), out / "summary.json", wall_time_seconds=watch.elapsed)
    print(f"campaign: threshold {result.threshold * 1e6:.3f} us, "
          f"false-alarm rate {result.pf_at_threshold:.4%} ({watch.elapsed:.1f} s)")
    if args.check:
        if not _check_report(_campaign_checks(result)):
            return EXIT_CHECK_FAILED
    return EXIT_OK


def _cmd_scenario(args) -> int:
    scenario = parse_scenario_file(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    with Stopwatch() as watch:
        report = sc.run_scenario(scenario)
    out = Path(args.out_dir)
    report_to_csv(report, out / "exchanges.csv")
    summary = {"command": "scenario", "scenario": scenario.name,
               "seed": scenario.seed, **report.summary}
    write_summary(summary, out / "summary.json", wall_time_seconds=watch.elapsed)
    print(f"scenario {scenario.name}: compromise rate "
          f"{report.summary['compromise_rate']:.3f}, alarm rate "
          f"{report.summary['alarm_rate']:.3f}")
    return EXIT_OK


def _cmd_necessity(args) -> int:
    with Stopwatch() as watch:
        reports = sc.run_necessity_suite(seed=args.seed)
    out = Path(args.out_dir)
    summary = {"command": "necessity", "seed": args.seed}
    for name, rep in reports.items():
        report_to_csv(rep, out / f"{name}-exchanges.csv")
        summary[name] = rep.summary
    write_summary(summary, out / "summary.json", wall_time_seconds=watch.elapsed)
    for name, rep in reports.items():
        print(f"{name}: compromise {rep.summary['compromise_rate']:.3f}, "
              f"formal alarms {rep.summary['alarm_rate']:.3f}, "
              f"epoch alarms {rep.summary['epoch_alarm_rate']:.3f}")
    if args.check:
        pred = reports["necessity-predictable-sync"].summary
        short = reports["necessity-shortcut"].summary
        unknown = reports["necessity-unknown-rtt"].summary
        checks = [
            ("predictable-sync: compromise >= 0.99 with zero alarms",
             pred["compromise_rate"] >= 0.99 and pred["alarm_rate"] == 0.0),
            ("shortcut: compromise >= 0.99 with zero alarms",
             short["compromise_rate"] >= 0.99 and short["alarm_rate"] == 0.0),
            ("unknown-rtt: compromise >= 0.99",
             unknown["compromise_rate"] >= 0.99),
            ("unknown-rtt: attack alarm rate matches benign rate",
             abs(unknown["epoch_alarm_rate"] - unknown["h0_epoch_alarm_rate"]) <= 0.01
             and unknown["epoch_alarm_rate"] < 0.5),
        ]
        if not _check_report(checks):
            return EXIT_CHECK_FAILED
    return EXIT_OK


def _sufficiency_scenario(seed: int) -> sc.Scenario:
    leg = 40e-6
    return sc.Scenario(
        name="sufficiency",
        channel=sc.deterministic_channel(leg),
        protocol=sc.ProtocolParams(noise_sigma=1e-9, intended_layover=100e-6,
                                   prior_tau_ab=leg + 5e-9, prior_tau_ba=leg - 5e-9),
        detector=sc.DetectorConfig(alert_limit=100e-6, margin=10e-6),
        seed=seed,
    )


def _cmd_sufficiency(args) -> int:
    scenario = _sufficiency_scenario(args.seed)
    with Stopwatch() as watch:
        outcome = sc.run_sufficiency_property(scenario, args.trials)
    out = Path(args.out_dir)
    summary = {"command": "sufficiency", "seed": args.seed,
               "trials": outcome["trials"], "successes": outcome["successes"],
               "compromised": outcome["compromised"], "alarms": outcome["alarms"]}
    write_summary(summary, out / "summary.json", wall_time_seconds=watch.elapsed)
    print(f"sufficiency: {outcome['successes']} undetected compromises in "
          f"{outcome['trials']} trials ({watch.elapsed:.1f} s)")
    if args.check:
        if not _check_report([("zero undetected compromises",
                               outcome["successes"] == 0)]):
            return EXIT_CHECK_FAILED
    return EXIT_OK


def _one_way_scenario(seed: int) -> sc.Scenario:
    leg = 40e-6
    return sc.Scenario(
        name="one-way-demo",
        channel=sc.deterministic_channel(leg),
        protocol=sc.ProtocolParams(noise_sigma=1e-9, intended_layover=100e-6,
                                   prior_tau_ab=leg, prior_tau_ba=leg),
        detector=sc.DetectorConfig(alert_limit=100e-6, margin=10e-6),
        strategy=FixedSyncDelay(delay=50e-6),
        seed=seed,
    )


def _cmd_one_way(args) -> int:
    seed = args.seed if args.seed is not None else 42
    if args.scenario:
        scenario = parse_scenario_file(args.scenario)
        if args.seed is not None:
            scenario.seed = args.seed
    else:
        scenario = _one_way_scenario(seed)
    with Stopwatch() as watch:
        report = sc.run_one_way_demo(scenario, n_exchanges=args.trials)
    out = Path(args.out_dir)
    report_to_csv(report, out / "exchanges.csv")
    summary = {"command": "one-way", "scenario": scenario.name,
               "seed": scenario.seed, **report.summary}
    write_summary(summary, out / "summary.json", wall_time_seconds=watch.elapsed)
    print(f"one-way: identity residual "
          f"{report.summary['identity_residual_seconds']:.3e} s over "
          f"{report.summary['exchanges']} exchanges")
    if args.check:
        if not _check_report([("per-exchange identity at machine precision",
                               report.summary["identity_residual_seconds"] <= 1e-12)]):
            return EXIT_CHECK_FAILED
    return EXIT_OK


def _cmd_codephase_demo(args) -> int:
    with Stopwatch() as watch:
        # exact arithmetic case: dyadic rates and delays, no noise
        exact = sc.run_codephase_exchanges(
            64, tau_ab=336 * 2.0**-23, tau_ba=336 * 2.0**-23,
            params=sc.CodephaseParams(sample_rate=2.0**23, chip_period=2.0**-20,
                                      code_bits=256, replica_bits=32,
                                      intended_layover=839 * 2.0**-23),
            seed=args.seed)
        exact_worst = float(np.max(np.abs(exact["rtt_measurement_error"])))

        # ten-megahertz sampling, high SNR, jittered sub-sample arrival phase
        high_snr = sc.run_codephase_exchanges(
            1000, tau_ab=40.05e-6, tau_ba=39.97e-6,
            params=sc.CodephaseParams(noise_sigma=0.05), seed=args.seed + 1,
            leg_jitter=2e-7)
        snr_worst = float(np.max(np.abs(high_snr["rtt_measurement_error"])))

        # distribution comparison against the packet abstraction, over the
        # operational queueing channel that the detector actually sees
        chan = sc.paper_channel()
        noisy = sc.run_codephase_exchanges(
            args.trials, tau_ab=0.0, tau_ba=0.0,
            params=sc.CodephaseParams(noise_sigma=1.0), seed=args.seed + 2,
            channel=chan)
        sigma = float(np.std(np.concatenate([noisy["toa_error_a"],
                                             noisy["toa_error_b"]])))
        matched = sc.run_matched_abstraction_exchanges(
            args.trials, 0.0, 0.0, 100e-6, sigma, seed=args.seed + 3,
            channel=chan)
        ks = ks_2samp(noisy["z_rtt"], matched)
    out = Path(args.out_dir)
    summary = {
        "command": "codephase-demo",
        "seed": args.seed,
        "trials": args.trials,
        "exact_worst_rtt_error_seconds": exact_worst,
        "high_snr_worst_rtt_error_seconds": snr_worst,
        "matched_noise_sigma_seconds": sigma,
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
    }
    write_summary(summary, out / "summary.json", wall_time_seconds=watch.elapsed)
    print(f"codephase: exact-case error {exact_worst:.3e} s, high-snr worst "
          f"{snr_worst * 1e9:.1f} ns, ks p {ks.pvalue:.3f} ({watch.elapsed:.1f} s)")
    if args.check:
        checks = [
            ("noiseless dyadic round trip is exact", exact_worst == 0.0),
            ("high-snr rtt error below 100 ns", snr_worst < 100e-9),
            ("distributions indistinguishable at level 0.01", ks.pvalue >= 0.01),
        ]
        if not _check_report(checks):
            return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chronoguard",
        description="Two-way clock synchronization and delay-attack detection simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_arg=False, scenario_optional=True, trials_default=1_000_000):
        if scenario_arg:
            if scenario_optional:
                p.add_argument("scenario", nargs="?", help="scenario file (TOML)")
            else:
                p.add_argument("scenario", help="scenario file (TOML)")
        p.add_argument("--seed", type=int, default=42, help="root RNG seed")
        p.add_argument("--trials", type=int, default=trials_default,
                       help="Monte Carlo trials/epochs")
        p.add_argument("--out-dir", default="results", help="result bundle directory")
        p.add_argument("--check", action="store_true",
                       help="validate summary metrics against reference bands")

    p = sub.add_parser("calibrate", help="benign RTT calibration campaign")
    common(p, scenario_arg=True)
    p.set_defaults(handler=_cmd_calibrate)

    p = sub.add_parser("campaign", help="full quantitative study")
    common(p)
    p.add_argument("--workers", type=int, default=None,
                   help="process count (capped by CHRONOGUARD_THREADS)")
    p.set_defaults(handler=_cmd_campaign)

    p = sub.add_parser("scenario", help="run a scenario file")
    common(p, scenario_arg=True, scenario_optional=False)
    p.set_defaults(handler=_cmd_scenario, seed=None)

    p = sub.add_parser("necessity", help="the three condition-violation attacks")
    common(p)
    p.set_defaults(handler=_cmd_necessity)

    p = sub.add_parser("sufficiency", help="compliant-adversary success count")
    common(p, trials_default=100_000)
    p.set_defaults(handler=_cmd_sufficiency)

    p = sub.add_parser("one-way", help="one-way vulnerability demonstration")
    common(p, scenario_arg=True, trials_default=10_000)
    p.set_defaults(handler=_cmd_one_way, seed=None)

    p = sub.add_parser("codephase-demo", help="sampled-waveform pipeline")
    common(p, trials_default=10_000)
    p.set_defaults(handler=_cmd_codephase_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ScenarioFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
