"""Report figures.  Rendering uses the Agg backend with no metadata stamped,
so identical inputs give identical PNG bytes."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write_bytes  # noqa: E402

STYLE = {
    "figure.figsize": (4.5, 3.4),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "glyphfusion",
}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(Path(path), buf.getvalue())


def rank_scatter(points: Sequence[tuple[float, float]], front: Sequence[bool], path,
                 labels: Sequence[str] | None = None) -> None:
    """Glyph score against style score; front members filled, the rest hollow."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        gx = [p[0] for p in points]
        sy = [p[1] for p in points]
        on = [i for i, f in enumerate(front) if f]
        off = [i for i, f in enumerate(front) if not f]
        ax.scatter([gx[i] for i in off], [sy[i] for i in off], facecolors="none",
                   edgecolors="0.45", label="dominated")
        ax.scatter([gx[i] for i in on], [sy[i] for i in on], color="C3", label="Pareto front")
        if labels is not None:
            for x, y, lab in zip(gx, sy, labels):
                ax.annotate(lab, (x, y), textcoords="offset points", xytext=(4, 3), fontsize=7)
        ax.set_xlabel("glyph score")
        ax.set_ylabel("style score")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower left", frameon=False)
        _save(fig, path)


def loss_curves(history: Sequence[Sequence[float]], path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        epochs = [row[0] for row in history]
        for col, name in ((1, "l_diff"), (2, "l_dis"), (3, "l_total")):
            ax.plot(epochs, [row[col] for row in history], label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        _save(fig, path)


def ablation_plot(xs: Sequence[float], means: Sequence[float], spreads: Sequence[float], path,
                  xlabel: str, ylabel: str, log_x: bool = False) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pos = list(range(len(xs))) if log_x else list(xs)
        ax.errorbar(pos, means, yerr=spreads, marker="o", capsize=3)
        if log_x:
            ax.set_xticks(pos, [f"{x:g}" for x in xs])
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        _save(fig, path)
