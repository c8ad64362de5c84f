#!/usr/bin/env python3
"""
Command-line front end.

    budget    analytic per-stage budgets for one or more deployments
    simulate  run one scenario file, write samples.csv and summary.csv
              (--capture-frames N also writes frames/bwmap_NNNNNN.bin)
    compare   run the scenario under all three deployments, write compare.csv
    sweep     run every entry of the file's "sweep" list, write sweep.csv

Exit codes: 0 success, 2 usage or configuration error, 3 invariant failure.
"""

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from dotenv import load_dotenv

from config import ConfigError, load_scenario, load_sweep
from latency_model import (
    DEFAULT_PRESET,
    MEASURED,
    STAGE_LABELS,
    Mode,
    budget_table,
    compute_budget,
    parse_modes,
    preset,
    reduction_percent,
    reported_percent,
)
from models import PonError, TcontClass
from pon_codec import write_message
from run_stats import summarize_latencies
from sim_engine import BREAKDOWN_LABELS, RunResult, Scenario, run, sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

DEVIATION_LIMIT_PERCENT = 1.0
DEGRADED = "DEGRADED"
STARVED = "STARVED"

SAMPLE_COLUMNS = ["alloc_id", "class", "arrival_us", "transmit_us", "latency_us", *BREAKDOWN_LABELS]
SUMMARY_COLUMNS = ["class", "mode", "mean", "p50", "p99", "count"]
COMPARE_COLUMNS = [
    "mode",
    "analytic_us",
    "simulated_mean_us",
    "deviation_percent",
    "reduction_vs_classical",
    "reduction_vs_virtual",
    "packets",
    "flag",
]
SWEEP_COLUMNS = ["scenario", "mode", "seed", "class", "mean", "p50", "p99", "count", "status"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6f}"
    return str(value)


def write_csv(
    path: Path, columns: Sequence[str], rows: Iterable[Sequence], timestamp: bool = True
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if timestamp:
            f.write(f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    logger.info(f"Wrote {path}")
    return path


def print_table(columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    cells = [[str(c) for c in columns]] + [[_short(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    for i, row in enumerate(cells):
        print("  ".join(cell.rjust(width) for cell, width in zip(row, widths)))
        if i == 0:
            print("  ".join("-" * width for width in widths))


def _short(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.2f}"
    return str(value)


def _out_dir(args) -> Path:
    return Path(args.out_dir or os.getenv("VPON_DBA_OUT") or "results")


def _summary_rows(result: RunResult) -> List[List]:
    return [
        [cls.value, result.mode.value, s.mean_us, s.p50_us, s.p99_us, s.count]
        for cls, s in result.summary.items()
    ]


def cmd_budget(args) -> int:
    params = preset(args.preset or DEFAULT_PRESET)
    modes = parse_modes(args.modes)
    rows = budget_table(params, modes)
    columns = ["mode", *STAGE_LABELS, "total_us", "reduction_vs_classical", "reduction_vs_virtual"]
    table = [[row[c] for c in columns] for row in rows]
    write_csv(_out_dir(args) / "budget.csv", columns, table, timestamp=not args.no_timestamp)
    print_table(
        ["mode", "total_us", "reduction_vs_classical", "reduction_vs_virtual"],
        [
            [row["mode"], row["total_us"], f"{row['reduction_vs_classical']}%", f"{row['reduction_vs_virtual']}%"]
            for row in rows
        ],
    )
    if args.measured:
        print()
        print_table(["measurement", "us"], [[k, v] for k, v in MEASURED.items()])
    return EXIT_OK


def _load(args, mode: Optional[Mode] = None) -> Scenario:
    return load_scenario(
        args.config,
        preset_name=args.preset,
        seed=args.seed,
        pin_variance=True if args.pin_variance else None,
        mode=mode,
    )


def cmd_simulate(args) -> int:
    mode = Mode(args.mode) if args.mode else None
    scenario = _load(args, mode)
    if args.capture_frames:
        scenario = replace(scenario, capture_frames=args.capture_frames)
    result = run(scenario)
    out = _out_dir(args)
    for frame_sn, wire in enumerate(result.wire_frames):
        write_message(out / "frames" / f"bwmap_{frame_sn:06d}.bin", wire)
    stamp = not args.no_timestamp
    write_csv(
        out / "samples.csv",
        SAMPLE_COLUMNS,
        (
            [
                s.alloc_id,
                s.tcont_class.value,
                s.arrival_us,
                s.transmit_us,
                s.latency_us,
                *(s.stages[label] for label in BREAKDOWN_LABELS),
            ]
            for s in result.samples
        ),
        timestamp=stamp,
    )
    rows = _summary_rows(result)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows, timestamp=stamp)
    print_table(SUMMARY_COLUMNS, rows)
    if not result.fast_path_viable:
        print("fast path degraded: no reserved window and preemption off")
    elif result.fallback_frames:
        print(
            f"fast path degraded: {result.fallback_frames} frames with nothing to preempt, "
            "low-latency traffic went through the CPU DBA"
        )
    return EXIT_OK


def _compare_latencies(result: RunResult) -> List[float]:
    low_latency = [s.latency_us for s in result.samples if s.tcont_class == TcontClass.LOW_LATENCY]
    return low_latency or [s.latency_us for s in result.samples]


def compare_rows(base: Scenario, results: Dict[Mode, RunResult]) -> List[List]:
    """One row per deployment: analytic vs simulated mean and the reductions"""
    means = {
        mode: summarize_latencies(_compare_latencies(result), TcontClass.LOW_LATENCY)
        for mode, result in results.items()
    }

    def served_elsewhere(mode: Mode) -> bool:
        return any(s.count for other, s in means.items() if other != mode)

    rows = []
    for mode in Mode:
        if mode not in results:
            continue
        analytic = compute_budget(base.params, mode).total_us
        stats = means[mode]
        deviation = 100.0 * abs(stats.mean_us - analytic) / analytic if stats.count else float("nan")

        def reduction(reference: Mode) -> str:
            ref = means.get(reference)
            if ref is None or not ref.count or not stats.count:
                return "n/a"
            return f"{reported_percent(100.0 * (1.0 - stats.mean_us / ref.mean_us))}%"

        result = results[mode]
        if not stats.count:
            flag = STARVED if served_elsewhere(mode) else "ok"
        elif not result.fast_path_viable or result.fallback_frames:
            flag = DEGRADED
        elif deviation <= DEVIATION_LIMIT_PERCENT:
            flag = "ok"
        elif base.pin_variance:
            flag = "DEVIATES"
        else:
            flag = "extends-beyond-published-model"
        rows.append(
            [
                mode.value,
                analytic,
                stats.mean_us,
                deviation,
                reduction(Mode.CLASSICAL_OEM),
                reduction(Mode.VIRTUAL_PON),
                stats.count,
                flag,
            ]
        )
    return rows


def cmd_compare(args) -> int:
    base = _load(args)
    scenarios = [replace(base, mode=mode, name=f"{base.name or 'compare'}-{mode.value}") for mode in Mode]
    results = {}
    for scenario, result in zip(scenarios, sweep(scenarios, max_workers=args.workers)):
        if isinstance(result, ConfigError):
            raise result
        results[scenario.mode] = result
    rows = compare_rows(base, results)
    write_csv(_out_dir(args) / "compare.csv", COMPARE_COLUMNS, rows, timestamp=not args.no_timestamp)
    print_table(COMPARE_COLUMNS, rows)
    analytic = {m: compute_budget(base.params, m) for m in Mode}
    print(
        "analytic reductions: "
        f"{reported_percent(reduction_percent(analytic[Mode.CLASSICAL_OEM], analytic[Mode.FAST_INTERCEPT]))}% vs classical, "
        f"{reported_percent(reduction_percent(analytic[Mode.VIRTUAL_PON], analytic[Mode.FAST_INTERCEPT]))}% vs virtual"
    )
    for row in rows:
        if row[-1] == DEGRADED:
            print(f"{row[0]}: fast path degradation, low-latency traffic went through the CPU DBA")
        elif row[-1] == STARVED:
            print(f"{row[0]}: no packets served while the other deployments carried traffic")
    return EXIT_OK


def _sweep_status(result: RunResult) -> str:
    if not result.fast_path_viable:
        return "degraded"
    if result.fallback_frames:
        return "fallback"
    return "ok"


def cmd_sweep(args) -> int:
    entries = load_sweep(
        args.config,
        preset_name=args.preset,
        seed=args.seed,
        pin_variance=True if args.pin_variance else None,
    )
    runnable = [e for e in entries if isinstance(e, Scenario)]
    outcomes = iter(sweep(runnable, max_workers=args.workers))
    rows = []
    failed = 0
    for index, entry in enumerate(entries):
        outcome = entry if isinstance(entry, ConfigError) else next(outcomes)
        if isinstance(outcome, ConfigError):
            failed += 1
            name = entry.name if isinstance(entry, Scenario) else f"sweep-{index}"
            rows.append([name, "", "", "", "", "", "", 0, f"error: {outcome}"])
            continue
        for cls, s in outcome.summary.items():
            rows.append(
                [
                    outcome.scenario_name,
                    outcome.mode.value,
                    outcome.seed,
                    cls.value,
                    s.mean_us,
                    s.p50_us,
                    s.p99_us,
                    s.count,
                    _sweep_status(outcome),
                ]
            )
    write_csv(_out_dir(args) / "sweep.csv", SWEEP_COLUMNS, rows, timestamp=not args.no_timestamp)
    print_table(SWEEP_COLUMNS, rows)
    if failed:
        logger.error(f"{failed} of {len(entries)} sweep scenarios failed")
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpon-dba", description="Upstream latency of dual-DBA virtualised PON"
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--preset", help=f"latency preset (default {DEFAULT_PRESET})")
        p.add_argument("--out-dir", help="output directory (default $VPON_DBA_OUT or ./results)")
        p.add_argument("--no-timestamp", action="store_true", help="omit the generated-at header line")

    def scenario(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", help="scenario JSON file")
        p.add_argument("--seed", type=int, help="override the file's seed")
        p.add_argument("--pin-variance", action="store_true", help="stochastic stages take their means")

    budget = sub.add_parser("budget", help="analytic latency budgets")
    common(budget)
    budget.add_argument("--modes", default="all", help="'all' or a comma list of classical,virtual,fast")
    budget.add_argument("--measured", action="store_true", help="also print the measured hardware constants")
    budget.set_defaults(handler=cmd_budget)

    simulate = sub.add_parser("simulate", help="run one scenario")
    common(simulate)
    scenario(simulate)
    simulate.add_argument("--mode", choices=[m.value for m in Mode], help="override the file's mode")
    simulate.add_argument(
        "--capture-frames",
        type=int,
        default=0,
        help="write the encoded BWmaps of the first N frames to <out-dir>/frames",
    )
    simulate.set_defaults(handler=cmd_simulate)

    compare = sub.add_parser("compare", help="run all deployments on the same traffic")
    common(compare)
    scenario(compare)
    compare.add_argument("--workers", type=int, default=3)
    compare.set_defaults(handler=cmd_compare)

    sweep_cmd = sub.add_parser("sweep", help="run the file's sweep list")
    common(sweep_cmd)
    scenario(sweep_cmd)
    sweep_cmd.add_argument("--workers", type=int, default=4)
    sweep_cmd.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        format="|%(levelname)s| %(asctime)s - %(message)s",
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PonError as e:
        logger.error(f"Invariant failure: {e}")
        print(f"invariant failure: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
