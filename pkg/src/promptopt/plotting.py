"""Score-curve figures for exported runs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_curve(rows: Sequence[dict], path: str | Path, title: str = "") -> Path:
    """Best-so-far and mean-candidate composite per step, saved to ``path``."""
    path = Path(path)
    steps = [r["step"] for r in rows]
    best = [r["best_so_far"] for r in rows]
    mean = [(r["step"], r["mean_candidate"]) for r in rows if r["mean_candidate"] is not None]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.step(steps, best, where="post", lw=2, label="best so far")
    if mean:
        ax.plot(*zip(*mean), ".", ms=4, alpha=0.6, label="mean candidate")
    ax.set_xlabel("step")
    ax.set_ylabel("composite score")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
