"""Matplotlib report figures written straight to files (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_decomposition(raw, trend, seasonal, noise, path, title=""):
    """Four stacked panels: the series and its three components."""
    t = np.arange(len(raw))
    fig, axes = plt.subplots(4, 1, figsize=(8, 7), sharex=True)
    for ax, series, name in zip(axes, (raw, trend, seasonal, noise), ("raw", "trend", "seasonal", "noise")):
        ax.plot(t, series, lw=0.9)
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("t")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_feature_maps(image, layers, path, max_channels=4):
    """Field image in the first column, then a few channels of each layer's maps.

    ``layers`` is a list of (name, (C, H, W) array) for a single sample.
    """
    n_rows = 1 + len(layers)
    fig, axes = plt.subplots(n_rows, max_channels, figsize=(2.2 * max_channels, 2.2 * n_rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    axes[0, 0].imshow(image, cmap="viridis")
    axes[0, 0].set_title("image", fontsize=8)
    for r, (name, maps) in enumerate(layers, start=1):
        for c in range(min(max_channels, maps.shape[0])):
            axes[r, c].imshow(maps[c], cmap="viridis")
            axes[r, c].set_title(f"{name} ch{c}", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_history(history, path):
    epochs = [row["epoch"] for row in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key, ax in (("loss", ax_loss), ("accuracy", ax_acc)):
        for split in ("train", "val"):
            name = f"{split}_{key}"
            if history and name in history[0]:
                ax.plot(epochs, [row[name] for row in history], marker=".", label=split)
        ax.set_xlabel("epoch")
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_ablation(table, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(table["variant"], table["accuracy"], color=["C0", "C1", "C2", "C3"][: len(table["variant"])])
    ax.set_ylim(0, 1)
    ax.set_ylabel("test accuracy")
    for x, (acc, delta) in enumerate(zip(table["accuracy"], table["delta"])):
        ax.text(x, acc + 0.02, f"{acc:.3f}\n({delta:+.3f})", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
