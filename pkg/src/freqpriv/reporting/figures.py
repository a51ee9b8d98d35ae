"""
reporting/figures.py

Matplotlib renderings of the dataset statistics and the ablation ladder.
All figures go through DataHandler.save_plot (Agg backend).
"""

import logging
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd
import matplotlib.pyplot as plt

from freqpriv.data.handler import DataHandler
from freqpriv.reporting.tables import ABLATION_METRICS, mean_rows
from freqpriv.stats.report import StatsReport

logger = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def fig_size(width: float = 6.0, ratio: float = GOLDEN):
    return width, width * ratio


# ------------------------------------------------------------------
# Dataset statistics
# ------------------------------------------------------------------


def plot_class_frequency(report: StatsReport):
    fig, ax = plt.subplots(figsize=fig_size(8.0))
    counts = report.class_counts.sort_values("count", ascending=False, kind="mergesort")
    ax.bar(np.arange(len(counts)), counts["count"], color="tab:blue")
    ax.set_yscale("function", functions=(np.sqrt, np.square))
    ax.set_xticks(np.arange(len(counts)))
    ax.set_xticklabels(counts["name"], rotation=90, fontsize=7)
    ax.set_ylabel("instances (sqrt scale)")
    ax.set_title(f"Class frequency (CV={_fmt(report.cv)}, top-20%={_fmt(report.top20)})")
    return fig


def plot_object_stats(report: StatsReport):
    """Normalized size, relative contrast and size disparity side by side."""
    fig, axes = plt.subplots(1, 3, figsize=fig_size(12.0, 0.3))
    panels = [
        (report.object_sizes.get("size_ratio"), "normalized object size"),
        (report.contrast.loc[~report.contrast["skipped"].astype(bool), "contrast_ratio"]
         if len(report.contrast) else None, "relative contrast"),
        (report.disparity.get("size_disparity"), "size disparity"),
    ]
    for ax, (values, label) in zip(axes, panels):
        values = pd.Series(dtype=float) if values is None else pd.to_numeric(values).dropna()
        if len(values):
            ax.hist(values, bins=20, color="tab:gray", edgecolor="white")
        ax.set_xlabel(label)
        ax.set_ylabel("count")
    fig.tight_layout()
    return fig


def plot_class_scale_spread(report: StatsReport):
    spread = report.class_scale_spread
    fig, ax = plt.subplots(figsize=fig_size(8.0))
    if len(spread):
        stats = [
            {"label": r.name, "whislo": r.min, "q1": r.q25, "med": r.median,
             "q3": r.q75, "whishi": r.max, "fliers": []}
            for r in spread.itertuples(index=False)
        ]
        ax.bxp(stats, showfliers=False)
        ax.tick_params(axis="x", labelrotation=90, labelsize=7)
    ax.set_ylabel("normalized size")
    ax.set_title("Per-class scale spread")
    return fig


def plot_face_density(report: StatsReport):
    density = report.face_density
    fig, ax = plt.subplots(figsize=fig_size())
    x = np.arange(len(density))
    ax.bar(x, density["instances"], color="tab:orange", label="face instances")
    ax.set_xticks(x)
    ax.set_xticklabels(density["bucket"].astype(str))
    ax.set_xlabel("faces per image")
    ax.set_ylabel("instances")
    twin = ax.twinx()
    twin.plot(x, density["images"], color="tab:blue", marker="o", label="images")
    twin.set_ylabel("images")
    return fig


def save_stats_figures(report: StatsReport, out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    figures = {
        "class_frequency.png": plot_class_frequency,
        "object_stats.png": plot_object_stats,
        "class_scale_spread.png": plot_class_scale_spread,
        "face_density.png": plot_face_density,
    }
    return [DataHandler.save_plot(out_dir / name, make(report)) for name, make in figures.items()]


# ------------------------------------------------------------------
# Ablation
# ------------------------------------------------------------------


def plot_ablation(table: pd.DataFrame):
    means = mean_rows(table)
    fig, ax = plt.subplots(figsize=fig_size(8.0))
    x = np.arange(len(means))
    width = 0.8 / len(ABLATION_METRICS)
    for i, metric in enumerate(ABLATION_METRICS):
        values = pd.to_numeric(means[metric], errors="coerce").fillna(0.0)
        ax.bar(x + i * width, values, width, label=metric)
    ax.set_xticks(x + width * (len(ABLATION_METRICS) - 1) / 2)
    ax.set_xticklabels(means["variant"])
    ax.set_ylabel("score (seed mean)")
    ax.legend()
    return fig


def save_ablation_figure(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    return DataHandler.save_plot(path, plot_ablation(table))


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.2f}"
