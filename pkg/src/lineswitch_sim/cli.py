"""Command-line harness.

    lineswitch-sim run scenario.cfg [--jobs N] [--out file.csv]
    lineswitch-sim preset fig3b [--out DIR] [--trials N] [--jobs N]
    lineswitch-sim calibrate --buffer 4194304 --mbps 1 --target 74.718

Output files default to ``$LINESWITCH_SIM_OUT`` (or the working directory).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from .experiment import (PRESETS, ConfigError, ExperimentConfig, calibrate_entry_bytes,
                         format_config, overhead_report, parse_config, preset,
                         reports_to_csv, run_trial, summary)

OUT_ENV = "LINESWITCH_SIM_OUT"

log = logging.getLogger("lineswitch_sim")


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV) or ".")


def _run_trials(config: ExperimentConfig, jobs: int):
    """Reports of the trials that finished, in trial order, and the first failure."""
    reports, failure = [], None
    if jobs <= 1:
        for i in range(config.trials):
            try:
                reports.append(run_trial(config, i))
            except Exception as exc:  # keep what we have; the caller reports it
                failure = exc
                break
        return reports, failure
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_trial, config, i) for i in range(config.trials)]
        for fut in futures:
            try:
                reports.append(fut.result())
            except Exception as exc:
                failure = failure or exc
                break
    return reports, failure


def _describe(config: ExperimentConfig, reports) -> str:
    stats = summary(reports) if reports else {}
    name = config.label or config.policy
    sat = stats.get("saturation_time", (None, None))
    if sat[0] is not None:
        return f"{name}: {len(reports)} trials, mean saturation {sat[0]:.3f} s (sd {sat[1]:.3f})"
    lat = stats.get("pages_ok", (None, None))
    if lat[0]:
        rates = [r.retrieval_success_rate for r in reports if r.retrieval_success_rate is not None]
        means = [r.mean_page_latency for r in reports if r.mean_page_latency is not None]
        mean = sum(means) / len(means) if means else float("nan")
        success = min(rates) if rates else float("nan")
        return (f"{name}: {len(reports)} trials, mean page latency {mean * 1000:.2f} ms, "
                f"min retrieval success {success:.3f}")
    return f"{name}: {len(reports)} trials, no saturation"


def cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    config = parse_config(text)
    if args.trials:
        config.trials = args.trials
        config.validate()
    out = Path(args.out or config.output or default_out_dir() / f"{config.label or config.policy}.csv")
    reports, failure = _run_trials(config, args.jobs)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(reports_to_csv(config, reports), encoding="utf-8")
    print(_describe(config, reports))
    print(f"wrote {out}")
    if failure is not None:
        print(f"error: trial {len(reports)} failed: {failure!r}", file=sys.stderr)
        return 1
    return 0


def cmd_preset(args) -> int:
    configs = preset(args.name, args.trials)
    if args.print_config:
        for config in configs:
            print(f"# {config.label}")
            print(format_config(config))
        return 0
    out_dir = Path(args.out) if args.out else default_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / f"{args.name}.csv"
    results = []
    status = 0
    with out.open("w", encoding="utf-8") as fh:
        for n, config in enumerate(configs):
            reports, failure = _run_trials(config, args.jobs)
            fh.write(reports_to_csv(config, reports, header=(n == 0)))
            fh.flush()
            print(_describe(config, reports), flush=True)
            results.append((config, reports))
            if failure is not None:
                print(f"error: {config.label}: {failure!r}", file=sys.stderr)
                status = 1
                break
    if args.name.startswith("overhead") and status == 0:
        baseline = results[0][1]
        for config, reports in results[1:]:
            print(f"overhead {config.label}: {overhead_report(baseline, reports):.2f}%")
    print(f"wrote {out}")
    return status


def cmd_calibrate(args) -> int:
    entry = calibrate_entry_bytes(args.buffer, args.mbps, args.target)
    print(f"entry_bytes = {entry:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lineswitch-sim",
                                     description="SDN control-plane saturation simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config file")
    run.add_argument("config")
    run.add_argument("--out", help="CSV path (default: $%s/<label>.csv)" % OUT_ENV)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--trials", type=int, help="override the configured trial count")
    run.set_defaults(func=cmd_run)

    pre = sub.add_parser("preset", help="run a canned sweep")
    pre.add_argument("name", choices=PRESETS)
    pre.add_argument("--out", help="output directory (default: $%s or .)" % OUT_ENV)
    pre.add_argument("--trials", type=int)
    pre.add_argument("--jobs", type=int, default=1)
    pre.add_argument("--print-config", action="store_true",
                     help="print the preset as config files instead of running it")
    pre.set_defaults(func=cmd_preset)

    cal = sub.add_parser("calibrate", help="back-solve entry_bytes from a saturation time")
    cal.add_argument("--buffer", type=int, required=True, help="buffer size in bytes")
    cal.add_argument("--mbps", type=float, required=True, help="attack bandwidth")
    cal.add_argument("--target", type=float, required=True, help="saturation time in seconds")
    cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
