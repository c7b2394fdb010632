"""
crowdswap command-line front end.

    crowdswap_cli.py simulate CONFIG [--seed N] [--out DIR]
    crowdswap_cli.py sweep CONFIG [--strategies a,b] [--scenarios p,q] [--runs N] [--jobs J] [--out DIR]
    crowdswap_cli.py synth --workers N --area LAT,LON,RADIUS_M --out FILE [--seed N] [--duration S]
                           [--tasks-out FILE --tasks N --kind parcel|sensing]

Exit codes: 0 success, 1 runtime failure in at least one run, 2 configuration error.
Log level: CROWDSWAP_LOG=error|warn|info|debug (environment or .env file).
"""

import argparse
import logging
import os
import sys
from multiprocessing import freeze_support

import numpy as np

from crowdswap.coord import STRATEGIES
from crowdswap.errors import ConfigError, CrowdswapError
from crowdswap.geoenv import Location, OperatingArea
from crowdswap.logs import configure_logging
from crowdswap.outputs import write_json, write_jsonl
from crowdswap.report import (plot_f1_convergence, write_charts, write_comparison_table, write_reports,
                              write_stream_log)
from crowdswap.scenario import PRESETS
from crowdswap.sim import run
from crowdswap.sweep import run_sweep
from crowdswap.traces import TaskKind, gen_tasks, save_tasks, save_traces, synth_traces
from settings_manager import SettingsManager

logger = logging.getLogger("crowdswap.cli")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

STRATEGY_ORDER = ("not", "random", "forced", "collaborative", "att")


def build_parser():
    parser = argparse.ArgumentParser(prog="crowdswap", description="Crowdshipping / crowdsensing task-transfer simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("config", help="scenario config file (JSON)")
    p.add_argument("--seed", type=int, default=None, help="override scenario.seed")
    p.add_argument("--out", default=None, help="output directory (default: output.dir)")

    p = sub.add_parser("sweep", help="run strategies x scenarios x seeds")
    p.add_argument("config", help="scenario config file (JSON)")
    p.add_argument("--strategies", default=",".join(STRATEGY_ORDER),
                   help="comma-separated strategy names")
    p.add_argument("--scenarios", default="base",
                   help=f"comma-separated presets ({', '.join(sorted(PRESETS))}) or 'base'")
    p.add_argument("--runs", type=int, default=30, help="seeds per scenario/strategy pair")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", default=None, help="output directory (default: output.dir)")

    p = sub.add_parser("synth", help="generate synthetic rides (and optionally tasks)")
    p.add_argument("--workers", type=int, required=True, help="number of rides")
    p.add_argument("--area", required=True, help="LAT,LON,RADIUS_M of the operating area")
    p.add_argument("--out", required=True, help="trace CSV to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=43200.0, help="arrival window in seconds")
    p.add_argument("--mode-mix", default="0.3,0.4,0.3", help="walk,bike,motorbike fractions")
    p.add_argument("--tasks-out", default=None, help="also write a task file (JSON)")
    p.add_argument("--tasks", type=int, default=600, help="number of tasks for --tasks-out")
    p.add_argument("--rate", type=float, default=50.0, help="tasks per hour for --tasks-out")
    p.add_argument("--deadline", type=float, default=1800.0, help="task deadline in seconds")
    p.add_argument("--kind", choices=("parcel", "sensing"), default="parcel")
    return parser


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_simulate(args):
    settings = SettingsManager(args.config)
    scenario = settings.to_scenario(seed=args.seed)
    output = settings.get_output()
    out_dir = args.out or output.get("dir", "out")

    result = run(scenario)
    payload = result.to_dict()
    payload["scenario"] = scenario.to_dict()
    write_json(os.path.join(out_dir, "result.json"), payload)
    if output.get("events", True):
        write_jsonl(os.path.join(out_dir, "events.jsonl"), result.events)
    if output.get("stream_log", True):
        write_stream_log(result.learner["f1_history"], os.path.join(out_dir, "stream_log.csv"))
    if output.get("charts", True):
        plot_f1_convergence({scenario.learner.variant: result.learner["f1_history"]},
                            os.path.join(out_dir, "f1_convergence.svg"))
    print(f"{scenario.strategy.name}: delay {100.0 * result.delay_rate:.1f}%, "
          f"{result.n_transfers} transfers, mean profit {result.mean_profit:.2f} EUR -> {out_dir}")
    return EXIT_OK


def _split_names(value, known, field):
    names = [v.strip() for v in value.split(",") if v.strip()]
    if not names:
        raise ConfigError(field, "needs at least one name")
    for name in names:
        if name not in known:
            raise ConfigError(field, f"unknown name '{name}', expected one of {sorted(known)}")
    return names


def cmd_sweep(args):
    if args.runs < 1:
        raise ConfigError("--runs", "must be >= 1")
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be >= 1")
    strategies = _split_names(args.strategies, STRATEGIES, "--strategies")
    presets = ["" if p == "base" else p
               for p in _split_names(args.scenarios, set(PRESETS) | {"base"}, "--scenarios")]

    settings = SettingsManager(args.config)
    base = settings.to_scenario()
    for preset in presets:
        if preset:
            settings.to_scenario(preset=preset)
    output = settings.get_output()
    out_dir = args.out or output.get("dir", "out")

    def progress(done, total):
        logger.info("Sweep progress: %d/%d runs", done, total)

    sweep = run_sweep(base, strategies, presets, args.runs, jobs=args.jobs, progress_callback=progress)
    write_reports(sweep, out_dir)
    write_comparison_table(sweep, os.path.join(out_dir, "comparison.csv"))
    if output.get("charts", True):
        write_charts(sweep, out_dir)
    write_json(os.path.join(out_dir, "sweep.json"), {
        "strategies": strategies,
        "scenarios": [p or "base" for p in presets],
        "runs": args.runs,
        "failures": [{"scenario": c.preset or "base", "strategy": c.strategy, **e}
                     for c in sweep.ordered_cells() for e in c.errors],
    })
    for cell in sweep.ordered_cells():
        if cell.report is not None:
            m = cell.report.means
            print(f"{cell.preset or 'base':>14} {cell.strategy:>14}: delay {100.0 * m['delay_rate']:.1f}%, "
                  f"transfers {m['n_transfers']:.1f}, mean profit {m['mean_profit']:.2f} EUR")
        else:
            print(f"{cell.preset or 'base':>14} {cell.strategy:>14}: all runs failed")
    return EXIT_RUNTIME if sweep.failed else EXIT_OK


def _parse_floats(value, n, field):
    try:
        parts = [float(v) for v in value.split(",")]
    except ValueError:
        raise ConfigError(field, f"expected {n} comma-separated numbers, got '{value}'") from None
    if len(parts) != n:
        raise ConfigError(field, f"expected {n} comma-separated numbers, got '{value}'")
    return parts


def cmd_synth(args):
    lat, lon, radius = _parse_floats(args.area, 3, "--area")
    if args.workers < 0:
        raise ConfigError("--workers", "must be non-negative")
    if radius <= 0:
        raise ConfigError("--area", "radius must be positive")
    try:
        area = OperatingArea(Location(lat, lon), radius)
    except ValueError as e:
        raise ConfigError("--area", str(e)) from None
    try:
        mode_mix = _parse_floats(args.mode_mix, 3, "--mode-mix")
        rng = np.random.default_rng(args.seed)
        traces = synth_traces(args.workers, area, args.duration, mode_mix, rng)
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("--mode-mix", str(e)) from None
    save_traces(traces, args.out)
    print(f"Wrote {len(traces)} ride(s) to {args.out}")

    if args.tasks_out:
        kind = TaskKind.PARCEL if args.kind == "parcel" else TaskKind.SENSING_CHAIN
        tasks = gen_tasks(kind, args.rate, args.tasks, area, args.deadline, 5.0, 5.0, rng)
        save_tasks(tasks, args.tasks_out)
        print(f"Wrote {len(tasks)} task(s) to {args.tasks_out}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "synth": cmd_synth}


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CrowdswapError, OSError, ValueError, RuntimeError) as e:
        logger.debug("Run failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    freeze_support()
    sys.exit(main())
