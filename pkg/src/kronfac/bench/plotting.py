"""Figures written to files (no display needed)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _heat(ax, M, title, vmax, edges):
    ax.imshow(np.abs(M), cmap="gray_r", vmin=0, vmax=vmax, interpolation="nearest")
    for e in edges[1:-1]:
        ax.axhline(e - 0.5, color="tab:red", lw=0.5, ls="--")
        ax.axvline(e - 0.5, color="tab:red", lw=0.5, ls="--")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])


def fisher_panels(cmp, out_dir) -> list[Path]:
    """Absolute-value heatmaps of the Fisher approximations and inverses."""
    out = Path(out_dir)
    edges = np.concatenate([[0], np.cumsum(cmp.block_sizes)])
    paths = []
    rows = [
        ("fisher_approx.png", [(cmp.F, "|F|"), (cmp.F_tilde, "|F tilde|"),
                               (cmp.F - cmp.F_tilde, "|F - F tilde|")]),
        ("inverse_approx.png", [(cmp.F_tilde_inv, "|F tilde^-1|"),
                                (cmp.F_tilde_inv - cmp.F_breve_inv, "|F tilde^-1 - F breve^-1|"),
                                (cmp.F_tilde_inv - cmp.F_hat_inv, "|F tilde^-1 - F hat^-1|")]),
    ]
    for name, panels in rows:
        vmax = np.percentile(np.abs(panels[0][0]), 99) or 1.0
        fig, axes = plt.subplots(1, 3, figsize=(10, 3.6))
        for ax, (M, title) in zip(axes, panels):
            _heat(ax, M, title, vmax, edges)
        fig.tight_layout()
        fig.savefig(out / name, dpi=120)
        plt.close(fig)
        paths.append(out / name)
    return paths


def training_curves(metrics_csv, out_path) -> Path:
    """Objective and training error against iteration, log-scaled."""
    with open(metrics_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    if rows:
        it = [int(r["iter"]) for r in rows]
        obj = [float(r["objective"]) for r in rows]
        err = [float(r["train_error"]) if r["train_error"] else np.nan for r in rows]
        ax1.plot(it, obj)
        ax1.set_yscale("log")
        ax2.plot(it, err)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("objective")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("training error")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)
