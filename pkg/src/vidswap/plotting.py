"""Figure rendering for the report paths (training curve, benchmark summary).

Uses the Agg backend so figures render headless, straight to files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def loss_curve(history: Sequence[float], path: str | Path,
               smooth_window: int = 50) -> None:
    """Per-step loss plus a running mean, log-scaled."""
    steps = np.arange(1, len(history) + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, history, lw=0.5, alpha=0.4, label="per step")
    if len(history) >= smooth_window:
        kernel = np.ones(smooth_window) / smooth_window
        smoothed = np.convolve(history, kernel, mode="valid")
        ax.plot(steps[smooth_window - 1:], smoothed, lw=1.5,
                label=f"mean over {smooth_window}")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def eval_figure(report, path: str | Path) -> None:
    """Per-case metric bars with aggregate lines."""
    ok = [c for c in report.cases if c.error is None]
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * max(1, len(ok))), 4))
    if ok:
        idx = np.arange(len(ok))
        bg = [c.background_preservation or 0.0 for c in ok]
        ra = [c.reference_appearance or 0.0 for c in ok]
        ax.bar(idx - 0.2, bg, width=0.4, label="background preservation")
        ax.bar(idx + 0.2, ra, width=0.4, label="reference appearance")
        for name, key, color in (("bg mean", "background_preservation", "C0"),
                                 ("ref mean", "reference_appearance", "C1")):
            agg = report.aggregate(key)
            if agg is not None:
                ax.axhline(agg, color=color, ls="--", lw=1)
        ax.set_xticks(idx)
        ax.set_xticklabels([c.case_id for c in ok], rotation=90, fontsize=6)
    failures = len(report.cases) - len(ok)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"{len(ok)} cases scored, {failures} failed "
                 f"({report.metric_version})")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
