"""
Report files: per-cell JSON, the strategy comparison table, the learner
stream log and static SVG charts.
"""

import logging
import os

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "crowdswap"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from crowdswap.outputs import atomic_open, write_csv, write_json  # noqa: E402

logger = logging.getLogger(__name__)

COMPARISON_HEADER = [
    "preset", "strategy", "n_runs", "n_failed",
    "delay_pct", "delay_pct_std",
    "completion_s", "completion_s_std",
    "transfers", "transfers_std",
    "mean_profit", "mean_profit_std",
    "fraction_profit_nonpositive",
]
STREAM_LOG_HEADER = ["n_seen", "precision", "recall", "f1"]

# No timestamp in the SVG, so charts are reproducible byte for byte.
SVG_METADATA = {"Date": None}


def report_filename(preset, strategy):
    return f"report_{preset or 'base'}_{strategy}.json"


def write_reports(sweep, out_dir):
    paths = []
    for cell in sweep.ordered_cells():
        path = os.path.join(out_dir, report_filename(cell.preset, cell.strategy))
        if cell.report is not None:
            payload = cell.report.to_dict()
        else:
            payload = {"strategy": cell.strategy, "preset": cell.preset, "n_runs": 0,
                       "errors": list(cell.errors)}
        paths.append(write_json(path, payload))
    return paths


def comparison_rows(sweep):
    rows = []
    for cell in sweep.ordered_cells():
        report = cell.report
        if report is None:
            rows.append([cell.preset, cell.strategy, 0, len(cell.errors)] + [""] * 9)
            continue
        m, s = report.means, report.stds
        rows.append([
            cell.preset, cell.strategy, report.n_runs, len(cell.errors),
            repr(100.0 * m["delay_rate"]), repr(100.0 * s["delay_rate"]),
            repr(m["mean_completion_s"]), repr(s["mean_completion_s"]),
            repr(m["n_transfers"]), repr(s["n_transfers"]),
            repr(m["mean_profit"]), repr(s["mean_profit"]),
            repr(report.fraction_nonpositive),
        ])
    return rows


def write_comparison_table(sweep, path):
    """One row per (preset, strategy) cell."""
    return write_csv(path, COMPARISON_HEADER, comparison_rows(sweep))


def write_stream_log(f1_history, path):
    """CSV of (n_seen, precision, recall, f1) rows as recorded by the prequential evaluator."""
    return write_csv(path, STREAM_LOG_HEADER, [[int(n), repr(p), repr(r), repr(f)] for n, p, r, f in f1_history])


# ============================================================================
# CHARTS
# ============================================================================

def _save(fig, path):
    with atomic_open(path, newline='\n') as f:
        fig.savefig(f, format="svg", metadata=SVG_METADATA, bbox_inches="tight")
    plt.close(fig)
    return path


def _grouped_bars(sweep, metric, scale, ylabel, title, path):
    cells = {key: cell for key, cell in sweep.cells.items() if cell.report is not None}
    x = np.arange(len(sweep.presets))
    width = 0.8 / max(1, len(sweep.strategies))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for i, strategy in enumerate(sweep.strategies):
        means, errors = [], []
        for preset in sweep.presets:
            cell = cells.get((preset, strategy))
            means.append(scale * cell.report.means[metric] if cell else np.nan)
            errors.append(scale * cell.report.stds[metric] if cell else 0.0)
        ax.bar(x + i * width, means, width, yerr=errors, label=strategy, capsize=3)
    ax.set_xticks(x + width * (len(sweep.strategies) - 1) / 2)
    ax.set_xticklabels([p or "base" for p in sweep.presets])
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.legend()
    return _save(fig, path)


def plot_profit_cdf(sweep, preset, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for strategy in sweep.strategies:
        cell = sweep.cells.get((preset, strategy))
        if cell is None or cell.report is None or not cell.report.profits:
            continue
        profits = np.asarray(cell.report.profits)
        ax.step(profits, np.arange(1, len(profits) + 1) / len(profits), where="post", label=strategy)
    ax.axvline(0.0, color="black", linewidth=0.6, linestyle=":")
    ax.set_xlabel("Worker profit (EUR)")
    ax.set_ylabel("Cumulative fraction of participants")
    ax.set_title(f"Profit distribution ({preset or 'base'})")
    ax.legend(loc="lower right")
    return _save(fig, path)


def plot_f1_convergence(histories, path):
    """`histories` maps a label to f1 history rows (n_seen, precision, recall, f1)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(histories):
        rows = histories[label]
        if not rows:
            continue
        ax.plot([r[0] for r in rows], [r[3] for r in rows], label=label)
    ax.set_xlabel("Resolved stream items")
    ax.set_ylabel("Prequential F1")
    ax.set_ylim(0.0, 1.0)
    ax.legend(loc="lower right")
    return _save(fig, path)


def write_charts(sweep, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    paths = [
        _grouped_bars(sweep, "delay_rate", 100.0, "Delayed tasks (%)", "Delay rate",
                      os.path.join(out_dir, "delay_bars.svg")),
        _grouped_bars(sweep, "mean_profit", 1.0, "Mean profit per participant (EUR)", "Worker profit",
                      os.path.join(out_dir, "profit_bars.svg")),
    ]
    for preset in sweep.presets:
        paths.append(plot_profit_cdf(sweep, preset, os.path.join(out_dir, f"profit_cdf_{preset or 'base'}.svg")))
    histories = {f"{c.preset or 'base'}/{c.strategy}": c.runs[0].learner.get("f1_history", [])
                 for c in sweep.ordered_cells() if c.runs}
    paths.append(plot_f1_convergence(histories, os.path.join(out_dir, "f1_convergence.svg")))
    logger.info("Wrote %d chart(s) to %s", len(paths), out_dir)
    return paths
