"""Matplotlib rendering for evaluation reports and latent projections."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import MetricsReport

# Pinned so repeated runs produce byte-identical image files.
_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": "pcae"}}


def render_metrics_figure(report: MetricsReport, path: str | Path) -> None:
    """Bar chart of per-class accuracy next to the overall metrics."""
    classes = sorted(report.per_class_accuracy)
    fig, (ax_cls, ax_all) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax_cls.bar(
        [str(c) for c in classes],
        [report.per_class_accuracy[c] for c in classes],
        color="tab:blue",
    )
    ax_cls.set_ylim(0, 1.05)
    ax_cls.set_xlabel("class")
    ax_cls.set_ylabel("accuracy")
    ax_cls.set_title("per-class accuracy")

    names, values = [], []
    for name, value in (
        ("acc", report.accuracy),
        ("macro-F1", report.macro_f1),
        ("D-1", report.distinct_1),
        ("D-2", report.distinct_2),
    ):
        if value is not None:
            names.append(name)
            values.append(value)
    ax_all.bar(names, values, color="tab:orange")
    ax_all.set_ylim(0, 1.05)
    ax_all.set_title("overall")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def render_latent_figure(
    points: np.ndarray, labels: Sequence[int], path: str | Path
) -> None:
    """Scatter of 2-D projected local latents, colored by class label."""
    points = np.asarray(points)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    for c in np.unique(labels):
        mask = labels == c
        ax.scatter(points[mask, 0], points[mask, 1], s=8, alpha=0.7, label=f"class {c}")
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.set_title("local latent prior (2-D projection)")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
