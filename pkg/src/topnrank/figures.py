"""Render result figures to files next to the delimited outputs.

All functions take a target path, write a PNG, and return the path; nothing
is shown interactively (Agg backend).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_training_curves(path, log) -> Path:
    """Batch loss and parameter delta per iteration, from a TrainingLog."""
    path = Path(path)
    iterations = [r.iteration for r in log.records]
    fig, (ax_loss, ax_delta) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(iterations, [r.loss for r in log.records], marker="o", ms=3)
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("batch loss")
    ax_loss.set_title("training loss")
    ax_delta.plot(
        iterations, [r.param_delta for r in log.records], marker="o", ms=3, color="tab:orange"
    )
    ax_delta.set_yscale("log")
    ax_delta.set_xlabel("iteration")
    ax_delta.set_ylabel("sum sq. parameter change")
    ax_delta.set_title(f"convergence (stop: {log.stop_reason})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metrics_plot(path, report, title="NDCG by cutoff") -> Path:
    """Mean NDCG against cutoff with a std band, from an ExperimentReport."""
    path = Path(path)
    cutoffs = list(report.cutoffs)
    means = [report.grand_mean(n) for n in cutoffs]
    stds = [report.grand_std(n) for n in cutoffs]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(cutoffs, means, yerr=stds, marker="o", capsize=3)
    ax.set_xlabel("cutoff N")
    ax.set_ylabel("NDCG@N")
    ax.set_title(title)
    ax.set_xticks(cutoffs)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_split_metrics_plot(path, metrics, title="NDCG by cutoff") -> Path:
    """Per-cutoff NDCG means of a single split, from a SplitMetrics."""
    path = Path(path)
    cutoffs = list(metrics.cutoffs)
    means = [metrics.means[n] for n in cutoffs]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(cutoffs, means, marker="o")
    ax.set_xlabel("cutoff N")
    ax.set_ylabel("NDCG@N")
    ax.set_title(title)
    ax.set_xticks(cutoffs)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_ablation_bars(path, report) -> Path:
    """Grouped bars: variant NDCG per cutoff, from an AblationReport."""
    path = Path(path)
    cutoffs = list(report.cutoffs)
    names = list(report.reports)
    width = 0.8 / len(names)
    x = range(len(cutoffs))
    fig, ax = plt.subplots(figsize=(7, 4))
    for pos, name in enumerate(names):
        rep = report.reports[name]
        means = [rep.grand_mean(n) for n in cutoffs]
        stds = [rep.grand_std(n) for n in cutoffs]
        offsets = [i + (pos - (len(names) - 1) / 2) * width for i in x]
        ax.bar(offsets, means, width=width, yerr=stds, capsize=2, label=name)
    ax.set_xticks(list(x))
    ax.set_xticklabels([f"@{n}" for n in cutoffs])
    ax.set_ylabel("NDCG")
    ax.set_title("variant comparison")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_scaling_plot(path, rows) -> Path:
    """Log-log per-iteration time and operation counts, from BenchmarkRows."""
    path = Path(path)
    algorithms = sorted({r.algorithm for r in rows})
    fig, (ax_time, ax_ops) = plt.subplots(1, 2, figsize=(9, 3.5))
    for algorithm in algorithms:
        mine = sorted(
            (r for r in rows if r.algorithm == algorithm),
            key=lambda r: r.items_per_user,
        )
        sizes = [r.items_per_user for r in mine]
        ax_time.plot(
            sizes, [r.median_seconds for r in mine], marker="o", label=algorithm
        )
        ax_ops.plot(sizes, [r.total_ops for r in mine], marker="o", label=algorithm)
    for ax, ylabel in ((ax_time, "seconds per iteration"), (ax_ops, "operations")):
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("items per user")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
    ax_time.set_title("wall clock")
    ax_ops.set_title("operation counters")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
