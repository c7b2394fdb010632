"""
Multi-seed sweeps over presets x strategies.

Each (preset, strategy, seed) run is independent: runs share only the
scenario description, and results are collected in submission order, so a
sweep produces the same reports for any number of worker processes.
"""

import logging
import traceback
from dataclasses import dataclass, field
from multiprocessing import Pool

from crowdswap.errors import CrowdswapError
from crowdswap.scenario import Scenario, apply_preset
from crowdswap.sim import run, summarize

logger = logging.getLogger(__name__)


@dataclass
class SweepCell:
    preset: str
    strategy: str
    report: object = None          # sim.Report, None when every run failed
    errors: list = field(default_factory=list)
    runs: list = field(default_factory=list)

    @property
    def failed(self):
        return bool(self.errors)


@dataclass
class SweepResult:
    strategies: list
    presets: list
    n_runs: int
    cells: dict = field(default_factory=dict)    # (preset, strategy) -> SweepCell

    @property
    def failed(self):
        return any(cell.failed for cell in self.cells.values())

    def ordered_cells(self):
        return [self.cells[(p, s)] for p in self.presets for s in self.strategies]


def sweep_scenarios(base, strategies, presets, runs):
    """[(preset, strategy, scenario)] for every cell and seed, in a fixed order."""
    jobs = []
    for preset in presets:
        preset_base = apply_preset(base, preset) if preset else base
        for strategy in strategies:
            for i in range(runs):
                scenario = preset_base.replace(**{"strategy.name": strategy, "seed": base.seed + i})
                jobs.append((preset, strategy, scenario))
    return jobs


def _run_job(job):
    preset, strategy, scenario_dict = job
    try:
        result = run(Scenario.from_dict(scenario_dict))
    except (CrowdswapError, ValueError, OSError, RuntimeError) as e:
        return preset, strategy, scenario_dict["seed"], None, f"{type(e).__name__}: {e}"
    except Exception:
        return preset, strategy, scenario_dict["seed"], None, traceback.format_exc(limit=3)
    result.events = []
    return preset, strategy, scenario_dict["seed"], result, None


def run_sweep(base, strategies, presets, runs, jobs=1, progress_callback=None):
    """
    Run every strategy on every preset for `runs` consecutive seeds starting
    at base.seed. Failed runs are recorded in their cell; the sweep goes on.

    Args:
        base: Scenario the presets are applied to.
        strategies: Strategy names.
        presets: Preset names; an empty string uses `base` unchanged.
        runs: Seeds per cell (>= 1).
        jobs: Worker processes.
        progress_callback: Called with (done, total) after each run.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    work = [(p, s, sc.to_dict()) for p, s, sc in sweep_scenarios(base, strategies, presets, runs)]
    total = len(work)
    logger.info("Sweep: %d strategies x %d presets x %d runs = %d runs on %d process(es)",
                len(strategies), len(presets), runs, total, jobs)

    outcomes = []
    if jobs == 1:
        for job in work:
            outcomes.append(_run_job(job))
            if progress_callback:
                progress_callback(len(outcomes), total)
    else:
        with Pool(jobs) as pool:
            for outcome in pool.imap(_run_job, work):
                outcomes.append(outcome)
                if progress_callback:
                    progress_callback(len(outcomes), total)

    sweep = SweepResult(strategies=list(strategies), presets=list(presets), n_runs=runs)
    for preset in presets:
        for strategy in strategies:
            sweep.cells[(preset, strategy)] = SweepCell(preset=preset, strategy=strategy)
    for preset, strategy, seed, result, error in outcomes:
        cell = sweep.cells[(preset, strategy)]
        if error is not None:
            logger.error("Run %s/%s seed %d failed: %s", preset, strategy, seed, error)
            cell.errors.append({"seed": seed, "error": error})
        else:
            cell.runs.append(result)
    for cell in sweep.cells.values():
        if cell.runs:
            cell.report = summarize(cell.runs, preset=cell.preset)
            cell.report.errors = list(cell.errors)
    return sweep
