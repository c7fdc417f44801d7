"""Figures written next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "figure.dpi": 100,
    "svg.hashsalt": "rqmoe",
}
COLORS = {"raw": "#7f7f7f", "rq": "#1f77b4"}


def _save(fig, path):
    # no Software/date metadata so reruns are byte-identical
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)


def plot_gaps(panels: dict, path):
    """Heatmaps of normalized gaps, one panel per labelled trace.

    ``panels`` maps a label to a list of per-layer normalized gap arrays.
    """
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.6 * len(panels), 2.8), squeeze=False)
        vmax = max((float(np.max(g)) for gaps in panels.values() for g in gaps if len(g)), default=1.0) or 1.0
        im = None
        for ax, (label, gaps) in zip(axes[0], panels.items()):
            width = max(len(g) for g in gaps)
            grid = np.full((len(gaps), width), np.nan)
            for i, g in enumerate(gaps):
                grid[i, :len(g)] = g
            im = ax.imshow(grid, aspect="auto", cmap="viridis", vmin=0.0, vmax=vmax, interpolation="nearest")
            ax.set_title(label)
            ax.set_xlabel("rank gap")
            ax.set_ylabel("layer")
            ax.set_xticks(range(width))
            ax.set_xticklabels([f"{r + 1}-{r + 2}" for r in range(width)], rotation=90)
            ax.set_yticks(range(len(gaps)))
        fig.colorbar(im, ax=axes[0].tolist(), label="gap / ideal load")
        _save(fig, path)


def plot_stream(report, path):
    """Cumulative and instantaneous LIS per layer, raw against R&Q."""
    layers = sorted({r.layer for r in report.rows})
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, len(layers), figsize=(2.8 * len(layers), 4.4), squeeze=False, sharex=True)
        for col, li in enumerate(layers):
            for row, metric in enumerate(("cumulative_lis", "instant_lis")):
                ax = axes[row][col]
                for variant in ("raw", "rq"):
                    pts = [(r.timestep, getattr(r, metric)) for r in report.rows
                           if r.layer == li and r.variant == variant]
                    if pts:
                        t, v = zip(*pts)
                        ax.plot(t, v, marker="o", ms=3, color=COLORS[variant], label=variant)
                ax.axhline(1.0, color="k", lw=0.5, ls=":")
                if row == 0:
                    ax.set_title(f"layer {li}")
                if col == 0:
                    ax.set_ylabel("cumulative LIS" if row == 0 else "instant LIS")
                if row == 1:
                    ax.set_xlabel("timestep")
        axes[0][0].legend(frameon=False)
        fig.suptitle(f"strategy: {report.strategy}")
        fig.tight_layout()
        _save(fig, path)
