"""Report figures, rendered headlessly to files next to the CSV output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(path, losses: np.ndarray) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(1, len(losses) + 1), losses)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss (MSE)")
    ax.set_title("Training loss")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sse_comparison(path, per_method: dict[str, np.ndarray]) -> None:
    """Box plot of per-image SSE for each prediction method."""
    names = list(per_method)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([np.asarray(per_method[n]) for n in names], tick_labels=names)
    ax.set_ylabel("per-image SSE")
    ax.set_title("Reconstruction error by method")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_timing_sweep(path, bench: dict) -> None:
    """Mean per-query latency against database size per method."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, entry in bench["methods"].items():
        ns = [row["n"] for row in entry["per_n"]]
        means = [row["mean_s"] * 1e3 for row in entry["per_n"]]
        ax.plot(ns, means, marker="o", label=name)
    ax.set_xlabel("database size N")
    ax.set_ylabel("mean per-query time (ms)")
    ax.set_title("Prediction latency vs database size")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_mmode(path, strips: dict[str, np.ndarray]) -> None:
    """Side-by-side M-mode strips (time on x, depth on y)."""
    names = list(strips)
    fig, axes = plt.subplots(
        1, len(names), figsize=(4 * len(names), 4), squeeze=False
    )
    for ax, name in zip(axes[0], names):
        strip = np.asarray(strips[name])
        ax.imshow(strip.T, aspect="auto", cmap="gray", origin="upper")
        ax.set_title(name)
        ax.set_xlabel("frame")
        ax.set_ylabel("depth (px)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
