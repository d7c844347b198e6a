"""Matplotlib figures for training curves, recall reports and heatmap overlays."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trainer import METRICS_HEADER, read_metrics  # noqa: E402

LABELS = {
    "theta": "ground FoV (deg)",
    "p": "satellite difficulty",
    "lr": "learning rate",
    "loss": "train loss",
    "val_r1": "validation R@1 (%)",
}


def plot_metrics(metrics_csv: str | Path, out_dir: str | Path, fmt: str = "png") -> list[Path]:
    """One figure per metric column of ``metrics.csv``."""
    rows = read_metrics(metrics_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for column in METRICS_HEADER[1:]:
        points = [(r["epoch"], r[column]) for r in rows if r.get(column) is not None]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        if points:
            xs, ys = zip(*points)
            ax.plot(xs, ys, marker="o", markersize=3)
        else:
            ax.text(0.5, 0.5, "no values recorded", ha="center", va="center", transform=ax.transAxes)
        ax.set_xlabel("epoch")
        ax.set_ylabel(LABELS[column])
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out / f"{column}.{fmt}"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def plot_recall(reports: Sequence[str | Path], out_dir: str | Path, fmt: str = "png") -> Path:
    """Grouped R@1 bars per FoV, one group member per report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    loaded = [(Path(p).stem, json.loads(Path(p).read_text())) for p in reports]
    fovs = sorted({f for _, d in loaded for f in d["table"]}, key=float, reverse=True)
    width = 0.8 / len(loaded)
    for i, (name, d) in enumerate(loaded):
        values = [d["table"].get(f, {}).get("R@1", 0.0) for f in fovs]
        xs = [j + i * width for j in range(len(fovs))]
        ax.bar(xs, values, width, label=f"{name} (avg {d['average_R@1']:.1f})")
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(fovs))])
    ax.set_xticklabels([f"{float(f):g}°" for f in fovs])
    ax.set_ylabel("R@1 (%)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = out / f"recall.{fmt}"
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_heatmaps(model, pair, alpha: float, theta: float, out_dir: str | Path) -> list[Path]:
    """Overlays of the full-view and limited-view heatmaps for one sample."""
    from .evaluation import export_heatmap_overlay, sample_heatmaps
    from .imaging import GroundTransformParams, transform_ground

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = sample_heatmaps(model, pair, alpha, theta)
    query = transform_ground(pair.panorama, GroundTransformParams(alpha, theta))
    stem = f"{pair.id}_a{alpha:g}_f{theta:g}"
    items = [
        ("sat_full", pair.satellite, maps.h_s),
        ("sat_limited", pair.satellite, maps.h_s_star),
        ("grd_full", query, maps.h_g_transformed),
        ("grd_limited", query, maps.h_g_star),
    ]
    written = []
    for name, image, heatmap in items:
        path = out / f"{stem}_{name}.png"
        export_heatmap_overlay(image, heatmap, path)
        written.append(path)
    return written
