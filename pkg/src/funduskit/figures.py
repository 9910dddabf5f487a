"""Matplotlib renderings of evaluation reports, written next to the CSV."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluate import threshold_key


def render_map_bars(rows, thresholds, path) -> Path:
    """Grouped bar chart: one group per split, one bar per IoU threshold."""
    path = Path(path)
    splits = [split for split, _ in rows]
    n_thr = len(thresholds)
    x = np.arange(len(splits))
    width = 0.8 / max(n_thr, 1)

    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(splits), 4.0))
    for i, t in enumerate(thresholds):
        values = [report.map_per_threshold[threshold_key(t)] for _, report in rows]
        bars = ax.bar(x + (i - (n_thr - 1) / 2) * width, values, width,
                      label=f"IoU {t:g}")
        ax.bar_label(bars, fmt="%.3f", fontsize=8)
    ax.set_xticks(x)
    ax.set_xticklabels(splits)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mAP")
    ax.set_title("mAP by split and IoU threshold")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_ap_histograms(report, thresholds, path) -> Path:
    """Per-image AP distribution at each threshold for one report."""
    path = Path(path)
    fig, axes = plt.subplots(1, len(thresholds), figsize=(3.2 * len(thresholds), 3.4),
                             sharey=True)
    if len(thresholds) == 1:
        axes = [axes]
    bins = np.linspace(0.0, 1.0, 11)
    for ax, t in zip(axes, thresholds):
        key = threshold_key(t)
        aps = [image_aps[key] for image_aps in report.per_image.values()]
        ax.hist(aps, bins=bins, edgecolor="black")
        ax.set_title(f"IoU {t:g} (mAP {report.map_per_threshold[key]:.3f})")
        ax.set_xlabel("per-image AP")
    axes[0].set_ylabel("images")
    fig.suptitle("Per-image AP distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
