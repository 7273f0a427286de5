"""Figures written next to the CSV reports (Agg backend, PNG files)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def comparison_figure(path, rows: list[dict], max_rows: int = 4) -> None:
    """One row per slice: LR, bicubic, model output, reference, and |output - reference|.

    Each ``rows`` entry holds ``name`` plus (H, W) or (H, W, 1) arrays under
    ``lr``, ``bicubic``, ``sr`` and ``hr``.
    """
    rows = rows[:max_rows]
    cols = ("lr", "bicubic", "sr", "hr", "error")
    fig, axes = plt.subplots(len(rows), len(cols), figsize=(2.2 * len(cols), 2.2 * len(rows)), squeeze=False)
    for r, row in enumerate(rows):
        sr, hr = np.squeeze(row["sr"]), np.squeeze(row["hr"])
        panels = {"lr": np.squeeze(row["lr"]), "bicubic": np.squeeze(row["bicubic"]), "sr": sr, "hr": hr,
                  "error": np.abs(sr - hr)}
        for c, key in enumerate(cols):
            ax = axes[r, c]
            if key == "error":
                ax.imshow(panels[key], cmap="magma", vmin=0.0, vmax=max(float(panels[key].max()), 1e-6))
            else:
                ax.imshow(panels[key], cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(key, fontsize=9)
        axes[r, 0].set_ylabel(row["name"], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def metrics_figure(path, names: list[str], model_psnr: list[float], baseline_psnr: list[float]) -> None:
    """Grouped bars of per-slice PSNR for the model and the bicubic baseline."""
    finite = [v for v in model_psnr + baseline_psnr if math.isfinite(v)]
    cap = (max(finite) + 5.0) if finite else 100.0
    model = [v if math.isfinite(v) else cap for v in model_psnr]
    base = [v if math.isfinite(v) else cap for v in baseline_psnr]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(names) + 2), 3.2))
    ax.bar(x - 0.2, model, width=0.4, label="model")
    ax.bar(x + 0.2, base, width=0.4, label="bicubic")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def loss_figure(path, steps: list[int], series: dict[str, list[float]]) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, values in series.items():
        ax.plot(steps, values, label=label, linewidth=1)
    ax.set_xlabel("step")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def bench_figure(path, lengths: list[int], timings: dict[str, list[float]]) -> None:
    """Scan time (ms) against sequence length, one line per method."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, values in timings.items():
        ax.plot(lengths, values, marker="o", label=label, linewidth=1)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("sequence length")
    ax.set_ylabel("time (ms)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
