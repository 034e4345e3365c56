"""Figure rendering for the report paths: training curves, sample grids,
verification error charts.  Backend is forced to Agg so everything works
headless; figures land next to the plain-text outputs they illustrate."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curve(records: list[dict], path) -> Path:
    """Bits/dim against step, with held-out evals overlaid when present."""
    path = Path(path)
    steps = [r["step"] for r in records]
    train = [r["train_bpd"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, train, lw=1.2, label="train bpd")
    evals = [(r["step"], r["eval_bpd"]) for r in records if "eval_bpd" in r]
    if evals:
        xs, ys = zip(*evals)
        ax.plot(xs, ys, "o--", ms=4, lw=1.0, label="eval bpd")
    ax.set_xlabel("step")
    ax.set_ylabel("bits / dim")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_sample_grid(images: np.ndarray, path, columns: int = 4) -> Path:
    """Tile uint8 samples into one overview figure."""
    path = Path(path)
    count = images.shape[0]
    columns = min(columns, count)
    rows = math.ceil(count / columns)
    fig, axes = plt.subplots(rows, columns, figsize=(2.0 * columns, 2.0 * rows))
    grid = np.atleast_1d(axes).reshape(-1)
    for i, ax in enumerate(grid):
        ax.axis("off")
        if i < count:
            img = images[i]
            ax.imshow(img.squeeze(-1) if img.shape[-1] == 1 else img,
                      cmap="gray" if img.shape[-1] == 1 else None,
                      interpolation="nearest")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_verify_chart(results, path) -> Path:
    """Measured error vs tolerance per check, log-scale ratio bars."""
    path = Path(path)
    names = [r.name for r in results]
    ratios = []
    for r in results:
        scale = abs(r.tolerance) if r.tolerance else 1.0
        ratios.append(max(abs(r.value) / scale, 1e-12) if scale else 1e-12)
    colors = ["tab:green" if r.passed else "tab:red" for r in results]
    fig, ax = plt.subplots(figsize=(8, 0.45 * len(results) + 1.5))
    ax.barh(range(len(results)), ratios, color=colors)
    ax.axvline(1.0, color="k", lw=1.0, ls="--", label="tolerance")
    ax.set_xscale("log")
    ax.set_yticks(range(len(results)), names, fontsize=8)
    ax.set_xlabel("measured / tolerance")
    ax.invert_yaxis()
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
