"""Figure rendering for eval reports.

Two figures accompany every rendered report: a 2x2 panel of per-cluster
metric scores (one subplot per judge metric, grouped bars per system) and
an efficiency panel comparing mean prompt tokens and latency.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evalharness import METRIC_TITLES, METRICS, EvalReport, TimeCost

SCORE_YLIM = (1.0, 5.2)


def render_metric_figure(rep: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clusters = sorted(rep.per_cluster)
    systems = sorted(rep.overall)
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    x = np.arange(len(clusters))
    width = 0.8 / max(1, len(systems))
    for ax, metric in zip(axes.flat, METRICS):
        for i, system in enumerate(systems):
            values = [
                rep.per_cluster[c].get(system, {}).get(metric, np.nan) for c in clusters
            ]
            ax.bar(x + i * width, values, width=width, label=system)
        ax.set_title(METRIC_TITLES[metric])
        ax.set_ylim(*SCORE_YLIM)
        ax.set_xticks(x + width * (len(systems) - 1) / 2)
        ax.set_xticklabels(clusters, rotation=45, ha="right", fontsize=7)
    axes.flat[0].legend(fontsize=8)
    fig.suptitle("Per-cluster judge scores by system")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_efficiency_figure(rep: EvalReport, cost: TimeCost | None, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    systems = sorted(rep.usage)
    fig, (ax_tokens, ax_latency) = plt.subplots(1, 2, figsize=(9, 4))
    tokens = [rep.usage[s]["mean_prompt_tokens"] for s in systems]
    latency = [rep.usage[s]["mean_latency_ms"] for s in systems]
    ax_tokens.bar(systems, tokens, color="tab:blue")
    ax_tokens.set_title("Mean prompt tokens")
    ax_latency.bar(systems, latency, color="tab:orange")
    ax_latency.set_title("Mean latency (ms)")
    if cost is not None:
        ax_latency.annotate(
            f"speedup {cost.speedup:.2f}x",
            xy=(0.5, 0.9),
            xycoords="axes fraction",
            ha="center",
        )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
