"""Figures for the CLI report paths, rendered headless to files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_complexity(report, path, title: str = "") -> Path:
    """Side-by-side bars of parameters and FLOPs per network part."""
    stages = report.by_stage()
    names = list(stages)
    params = [stages[n][0] / 1e6 for n in names]
    flops = [stages[n][1] / 1e9 for n in names]
    fig, (ax_p, ax_f) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_p.bar(names, params, color="tab:blue")
    ax_p.set_ylabel("parameters (M)")
    ax_f.bar(names, flops, color="tab:orange")
    ax_f.set_ylabel("GFLOPs")
    for ax in (ax_p, ax_f):
        ax.tick_params(axis="x", rotation=45)
    fig.suptitle(title or f"{report.resolution[0]}x{report.resolution[1]} input")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training(losses, accuracies, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(losses) + 1), losses, label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    if accuracies:
        acc_ax = ax.twinx()
        steps, acc = zip(*accuracies)
        acc_ax.plot(steps, acc, "o-", color="tab:green", label="train accuracy")
        acc_ax.set_ylim(0, 1.05)
        acc_ax.set_ylabel("accuracy")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
