"""Multi-panel convergence figures: mean squared distance vs iteration on a
log scale, shaded 3-standard-error bands, dashed envelope overlays.

Rendering is a pure function of the input files: fixed style, fixed palette,
no timestamps, so identical inputs give identical bytes.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_FLOOR = 1e-300  # keeps log-scale bands positive


def _group_panels(files):
    """Group by the panel metadata when every file carries it (first-seen
    order); otherwise split the file list into consecutive chunks."""
    if files and all(f.panel for f in files):
        order = []
        groups = {}
        for f in files:
            if f.panel not in groups:
                order.append(f.panel)
                groups[f.panel] = []
            groups[f.panel].append(f)
        return [(name, groups[name]) for name in order]
    return [(None, list(files))]


def _chunk(files, n_panels):
    per = -(-len(files) // n_panels)
    return [
        (None, files[i : i + per]) for i in range(0, len(files), per)
    ]


def plot_convergence(files, layout=None, log_y=True, out_path="figure.png"):
    """Render the series into an R x C grid and write PNG + PDF.

    layout is a (rows, cols) pair or None, in which case one column per panel
    group is used. Returns the list of written paths.
    """
    files = list(files)
    if not files:
        raise ValueError("no series files to plot")
    panels = _group_panels(files)
    if layout is not None:
        rows, cols = layout
        if rows * cols < 1:
            raise ValueError("layout must have at least one cell")
        if len(panels) == 1 and rows * cols > 1:
            panels = _chunk(files, rows * cols)
        if len(panels) > rows * cols:
            raise ValueError(
                f"layout {rows}x{cols} cannot hold {len(panels)} panels"
            )
    else:
        rows, cols = 1, len(panels)

    fig, axes = plt.subplots(
        rows, cols, figsize=(4.2 * cols, 3.4 * rows), squeeze=False
    )
    flat = axes.ravel()
    for ax in flat[len(panels) :]:
        ax.set_visible(False)
    for ax, (name, members) in zip(flat, panels):
        for j, series in enumerate(members):
            color = _COLORS[j % len(_COLORS)]
            y = np.maximum(series.mean_sq_dist, _FLOOR) if log_y else series.mean_sq_dist
            ax.plot(series.ks, y, color=color, lw=1.4, label=series.label)
            lo = series.mean_sq_dist - 3 * series.stderr
            hi = series.mean_sq_dist + 3 * series.stderr
            if log_y:
                lo = np.maximum(lo, _FLOOR)
                hi = np.maximum(hi, _FLOOR)
            ax.fill_between(series.ks, lo, hi, color=color, alpha=0.25, lw=0)
            if series.has_envelope:
                env = series.envelope.astype(float)
                mask = np.isfinite(env)
                ax.plot(series.ks[mask], env[mask], color=color, lw=1.1,
                        ls="--", label=f"{series.label} bound")
        if log_y:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean squared distance")
        if name:
            ax.set_title(name)
        ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()

    base, ext = os.path.splitext(out_path)
    targets = [out_path]
    if ext.lower() == ".png":
        targets.append(base + ".pdf")
    elif ext.lower() == ".pdf":
        targets.append(base + ".png")
    written = []
    for target in targets:
        fig.savefig(target, dpi=150, metadata=_clean_metadata(target))
        written.append(target)
    plt.close(fig)
    return written


def _clean_metadata(path):
    # strip volatile fields so identical inputs give identical bytes
    if path.lower().endswith(".pdf"):
        return {"CreationDate": None, "Producer": None, "Creator": None}
    return {"Software": None}
