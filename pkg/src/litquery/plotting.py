"""Figures written next to the run artifacts."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .benchmark import HITS, _type_order  # noqa: E402


def _figure(width=8, height=None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def plot_training(log, path) -> Path:
    """Loss terms and validation MRR per epoch."""
    path = Path(path)
    epochs = [r["epoch"] for r in log]
    fig, ax = _figure()
    ax.plot(epochs, [r["link_loss"] for r in log], label="link loss")
    ax.plot(epochs, [r["attr_loss"] for r in log], label="attribute loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    val = [r["val_mrr"] for r in log]
    if any(np.isfinite(v) for v in val):
        ax2 = ax.twinx()
        ax2.plot(epochs, val, color="k", linestyle="--", label="val MRR")
        ax2.set_ylabel("filtered MRR")
        ax2.set_ylim(0, 1)
        ax2.legend(loc="upper center", frameon=False)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metrics(reports: dict, directory) -> list:
    """Grouped bars of MRR/Hits@k per query type and of literal MAE/MSE."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    methods = list(reports)
    entity_types = _type_order({t for r in reports.values() for t in r.entity})
    if entity_types:
        metrics = ("mrr",) + tuple(f"hits@{k}" for k in HITS)
        fig, axes = plt.subplots(len(metrics), 1, figsize=(max(6, 0.7 * len(entity_types) + 2), 2.2 * len(metrics)),
                                 sharex=True)
        x = np.arange(len(entity_types))
        width = 0.8 / len(methods)
        for ax, metric in zip(axes, metrics):
            for j, m in enumerate(methods):
                vals = [reports[m].entity.get(t, {}).get(metric, np.nan) for t in entity_types]
                ax.bar(x + j * width - 0.4 + width / 2, vals, width, label=m)
            ax.set_ylabel(metric.upper())
            ax.set_ylim(0, 1)
        axes[-1].set_xticks(x)
        axes[-1].set_xticklabels(entity_types)
        axes[0].legend(frameon=False, ncol=max(1, len(methods)))
        fig.tight_layout()
        out = directory / "entity_metrics.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    literal_types = _type_order({t for r in reports.values() for t in r.literal})
    if literal_types:
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        x = np.arange(len(literal_types))
        width = 0.8 / len(methods)
        for ax, metric in zip(axes, ("mae", "mse")):
            for j, m in enumerate(methods):
                vals = [reports[m].literal.get(t, {}).get(metric, np.nan) for t in literal_types]
                ax.bar(x + j * width - 0.4 + width / 2, vals, width, label=m)
            ax.set_xticks(x)
            ax.set_xticklabels(literal_types)
            ax.set_title(metric.upper())
        axes[0].legend(frameon=False)
        fig.tight_layout()
        out = directory / "literal_metrics.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written
