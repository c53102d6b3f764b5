"""Render the evaluation scatter and correlation heat map as SVG files.

Output is byte-reproducible: the SVG id hash salt is pinned and the date
metadata is dropped, so identical inputs give identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "segqa"

import matplotlib.pyplot as plt
import numpy as np

from .grid import SCORED_TISSUES
from .stats import CorrelationCell, EvaluationReport

_TISSUE_LABELS = [t.name if t.name in ("CSF", "GM", "WM") else t.name.capitalize() for t in SCORED_TISSUES]
_MARKERS = ("o", "s", "^", "D", "v")


def _save(fig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_scatter(report: EvaluationReport, path) -> None:
    """Predicted-vs-actual Dice per tissue with the identity line."""
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.plot([0, 1], [0, 1], color="0.6", linewidth=1.0, zorder=1)
    for (tissue, summary), label, marker in zip(
        report.per_tissue.items(), _TISSUE_LABELS, _MARKERS
    ):
        ax.scatter(
            summary.pairs[:, 0],
            summary.pairs[:, 1],
            s=22,
            marker=marker,
            alpha=0.8,
            label=label,
            zorder=2,
        )
    ax.set_xlim(0.0, 1.05)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("actual Dice")
    ax.set_ylabel("predicted Dice")
    r_txt = "undefined" if report.pearson_r is None else f"{report.pearson_r:.3f}"
    ax.set_title(f"pooled r = {r_txt}, MAE = {report.mean_abs_diff:.3f}")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_matrix(grid: list[list[CorrelationCell | None]], path) -> None:
    """|r| heat map, tissues by features, with '*' marking p < 0.05."""
    from .feature_pipeline import FEATURE_NAMES

    n_rows = len(grid)
    n_cols = len(grid[0]) if grid else 0
    values = np.full((n_rows, n_cols), np.nan)
    for i, row in enumerate(grid):
        for j, cell in enumerate(row):
            if cell is not None:
                values[i, j] = abs(cell.r)

    fig, ax = plt.subplots(figsize=(0.45 * n_cols + 2.0, 0.5 * n_rows + 2.0))
    masked = np.ma.masked_invalid(values)
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("0.85")
    image = ax.imshow(masked, vmin=0.0, vmax=1.0, cmap=cmap, aspect="auto")
    for i, row in enumerate(grid):
        for j, cell in enumerate(row):
            if cell is not None and cell.significant:
                ax.text(j, i, "*", ha="center", va="center", color="white", fontsize=11)
    ax.set_xticks(range(n_cols))
    ax.set_xticklabels(FEATURE_NAMES[:n_cols], rotation=90, fontsize=7)
    ax.set_yticks(range(n_rows))
    ax.set_yticklabels(_TISSUE_LABELS[:n_rows], fontsize=8)
    fig.colorbar(image, ax=ax, label="|r|", shrink=0.8)
    ax.set_title("absolute feature-Dice correlation (* p < 0.05)")
    fig.tight_layout()
    _save(fig, path)
