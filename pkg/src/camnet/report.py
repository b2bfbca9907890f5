"""PNG figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_histograms(report, path):
    """One panel per layer, paths overlaid as step histograms."""
    names = list(report.layers)
    fig, axes = plt.subplots(len(names), 1, figsize=(6, 2.4 * len(names)), squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        h = report.layers[name]
        for p, counts in enumerate(h.counts, start=1):
            ax.stairs(counts, h.edges, label=f"path {p}")
        pairs = " ".join(f"{h.tv_distance(0, b):.3f}" for b in range(1, len(h.counts)))
        ax.set_title(f"{name}  (TV vs path 1: {pairs})", fontsize=9)
        ax.legend(fontsize=8)
    axes[-1, 0].set_xlabel("weight")
    return _save(fig, path)


def plot_lifelong(history, path):
    """Accuracy of every task after each phase."""
    table = history.table()
    fig, ax = plt.subplots(figsize=(6, 4))
    phases = np.arange(1, table.shape[0] + 1)
    for k, task in enumerate(history.tasks):
        ax.plot(phases, table[:, k], marker="o", label=task)
    ax.set_xticks(phases, [f"after {t}" for t in history.tasks])
    ax.set_ylim(0, 1)
    ax.set_ylabel("test accuracy")
    ax.legend()
    return _save(fig, path)


def plot_metrics(metrics, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [e.epoch for e in metrics.epochs]
    ax.plot(epochs, metrics.train_loss, label="train loss")
    tested = [e for e in metrics.epochs if e.test is not None]
    if tested:
        ax.plot([e.epoch for e in tested], [e.test.loss for e in tested], label="test loss")
        if metrics.task == "classification":
            ax2 = ax.twinx()
            ax2.plot([e.epoch for e in tested], [e.test.error for e in tested], "k--", label="test error")
            ax2.set_ylabel("test error")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right")
    return _save(fig, path)
