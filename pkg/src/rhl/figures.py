"""Small matplotlib helpers for the report path.

Rendering must work headless, so the Agg backend is forced before
pyplot is imported anywhere in this process.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import TimeSeries

_STYLE = {
    "figure.figsize": (8.0, 3.2),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.35,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def render_timeseries(series: TimeSeries, title: str, ylabel: str, path: str | Path) -> Path:
    """Render one step series to a PNG and return its path."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.step(series.timestamps(), series.values, where="post", lw=1.2)
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


_PART_ORDER = ("computation", "data_transfer", "orchestration", "runtime_overhead")
_PART_COLORS = ("#4477aa", "#66ccee", "#ee6677", "#bbbbbb")


def render_decomposition(decomp: dict, path: str | Path) -> Path:
    """Render the runtime decomposition as one stacked horizontal bar."""
    path = Path(path)
    total = decomp.get("total", 0.0) or 1.0
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(8.0, 1.8))
        left = 0.0
        for part, color in zip(_PART_ORDER, _PART_COLORS):
            width = decomp.get(part, 0.0)
            ax.barh(0, width, left=left, color=color,
                    label=f"{part} ({100.0 * width / total:.1f}%)")
            left += width
        ax.set_yticks([])
        ax.set_xlabel("aggregate task seconds")
        ax.set_title("runtime decomposition")
        ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.45), ncol=4, frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
