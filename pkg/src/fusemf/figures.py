"""Figure rendering for the report-producing command paths.

Every report writer in the CLI can drop a PNG next to its delimited output.
Rendering is deterministic for fixed inputs, so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "rank_curves_figure",
    "evaluation_figure",
    "ablation_figure",
    "init_study_figure",
    "trace_figure",
]

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def rank_curves_figure(report, path) -> None:
    """RSS, explained variance and cophenetic curves over evaluated rank vectors."""
    evals = report.evaluations
    labels = ["x".join(str(k) for k in q.ranks) for q in evals]
    x = np.arange(len(evals))
    fig, axes = plt.subplots(3, 1, figsize=(max(6, 0.45 * len(evals)), 8), sharex=True)
    axes[0].plot(x, [q.rss for q in evals], "o-", color="tab:blue")
    axes[0].set_ylabel("RSS (held-in)")
    axes[1].plot(x, [q.explained_variance for q in evals], "o-", color="tab:green",
                 label="held-in")
    axes[1].plot(x, [q.explained_variance_out for q in evals], "s--",
                 color="tab:olive", label="held-out")
    axes[1].set_ylabel("explained variance")
    axes[1].legend(loc="lower right", fontsize=8)
    axes[2].plot(x, [q.cophenetic for q in evals], "o-", color="tab:red")
    axes[2].set_ylabel("cophenetic corr.")
    axes[2].set_xticks(x)
    axes[2].set_xticklabels(labels, rotation=60, fontsize=7)
    selected = "x".join(str(k) for k in report.selected)
    axes[0].set_title(f"rank search (selected {selected})")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def evaluation_figure(reports: list[tuple[str, object]], path) -> None:
    """Per-fold F1 bars for one or more evaluation runs."""
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(1, len(reports))
    for idx, (name, report) in enumerate(reports):
        folds = np.arange(len(report.fold_f1))
        ax.bar(folds + idx * width, report.fold_f1, width=width,
               label=f"{name} (mean {report.mean_f1:.3f})")
    ax.set_xlabel("fold")
    ax.set_ylabel("F1 (threshold rule)")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def ablation_figure(rows: list[tuple[str, float, float]], path) -> None:
    """Mean F1 with a std whisker per source subset."""
    names = [r[0] for r in rows]
    means = [r[1] for r in rows]
    stds = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(rows)), 4))
    ax.bar(np.arange(len(rows)), means, yerr=stds, capsize=4, color="tab:blue")
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean CV F1")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def init_study_figure(rows: list[tuple[str, float, float, float, float]], path) -> None:
    """Relative factorization error per initialization strategy."""
    names = [r[0] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, [r[1] for r in rows], width=0.4, label="after 1 iteration")
    ax.bar(x + 0.2, [r[3] for r in rows], width=0.4, label="after 20 iterations")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, fontsize=8)
    ax.set_ylabel("relative error vs. best rank-k")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def trace_figure(traces: list, path) -> None:
    """Objective and target-residual checkpoints of the fitted members."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for idx, trace in enumerate(traces):
        if trace.objective_samples:
            it, obj = zip(*trace.objective_samples)
            axes[0].plot(it, obj, alpha=0.7, label=f"member {idx}")
        if trace.target_residuals:
            it, res = zip(*trace.target_residuals)
            axes[1].plot(it, res, alpha=0.7)
    axes[0].set_ylabel("objective")
    axes[1].set_ylabel("target residual")
    axes[1].set_xlabel("iteration")
    if len(traces) <= 8:
        axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
