"""Report figures rendered with the Agg backend to PNG files."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no Software/date chunks, so reruns produce identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_pr_curve(precision, recall, path, label: str = "prediction") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    ax.plot(recall, precision, lw=1.5, label=label)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower left")
    fig.tight_layout()
    _save(fig, path)


def plot_loss_curves(steps: Sequence[int], series: dict[str, Sequence[float]], path) -> None:
    """One line per loss term on a log axis."""
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for name, values in series.items():
        ax.plot(steps, values, lw=1.2, label=name)
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(values: Sequence[float], metrics: dict[str, Sequence[float]], xlabel: str, path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for name, ys in metrics.items():
        ax.plot(values, ys, marker="o", lw=1.2, label=name)
    ax.set_xlabel(xlabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
