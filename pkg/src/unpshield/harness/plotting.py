"""Matplotlib defaults and figure helpers for reward curves and safety traces.

Figures are rendered off-screen and saved with a fixed SVG hash salt and no
date stamp, so identical data gives byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "legend.frameon": False,
    "svg.fonttype": "none",
    "svg.hashsalt": "unpshield",
}

MODE_COLORS = {"unp": "#1b7837", "none": "#b2182b", "mbs": "#2166ac"}
SAVE_METADATA = {"svg": {"Date": None}, "png": {"Software": None}}


def _save(fig, path: Path) -> Path:
    fmt = path.suffix.lstrip(".") or "svg"
    fig.savefig(path, format=fmt, metadata=SAVE_METADATA.get(fmt))
    plt.close(fig)
    return path


def plot_curve(mean, std, path: str | Path, title: str = "", mode: str | None = None) -> Path:
    """Mean episode reward with a +-1 std band."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    episodes = np.arange(1, len(mean) + 1)
    color = MODE_COLORS.get(mode or "", "#333333")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.fill_between(episodes, mean - std, mean + std, color=color, alpha=0.25, linewidth=0, label="mean ± std")
        ax.plot(episodes, mean, color=color, label="mean")
        ax.set_xlabel("episode")
        ax.set_ylabel("episode reward")
        if title:
            ax.set_title(title)
        ax.legend(loc="best")
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_trace(steps, feature: np.ndarray, unsafe, intervened, path: str | Path, ylabel: str, title: str = "") -> Path:
    """One feature over a test episode, marking unsafe and shielded steps."""
    steps = np.asarray(steps)
    feature = np.asarray(feature, dtype=np.float64)
    unsafe = np.asarray(unsafe, dtype=bool)
    intervened = np.asarray(intervened, dtype=bool)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, feature, color="#333333")
        if intervened.any():
            ax.scatter(steps[intervened], feature[intervened], s=10, color=MODE_COLORS["mbs"], label="shield intervened")
        if unsafe.any():
            ax.scatter(steps[unsafe], feature[unsafe], s=14, marker="x", color=MODE_COLORS["none"], label="unsafe action")
        ax.set_xlabel("step")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if intervened.any() or unsafe.any():
            ax.legend(loc="best")
        fig.tight_layout()
        return _save(fig, Path(path))
