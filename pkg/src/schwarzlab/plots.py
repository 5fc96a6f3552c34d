"""Figure rendering for solve/bench artifacts.

Every figure lands next to its delimited source file; rendering is headless
(Agg) and never required for the numerical pipeline.
"""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import LogNorm

FIG_SIZE = (5.4, 3.6)


def fig_time_to_accuracy(rows, out_path, tol=1e-8, title=None):
    """Relative residual vs cumulative seconds; dotted line marks the end
    of setup, dashed line the target tolerance."""
    setup_rows = [r for r in rows if r["phase"] == "setup"]
    solve_rows = [r for r in rows if r["phase"] == "solve"]
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    xs = [r["elapsed_seconds"] for r in setup_rows + solve_rows]
    ys = [max(r["relative_residual"], 1e-300) for r in setup_rows + solve_rows]
    ax.semilogy(xs, ys, "-", color="tab:blue", lw=1.4)
    if setup_rows:
        ax.axvline(setup_rows[-1]["elapsed_seconds"], color="gray",
                   ls=":", lw=1.0, label="end of setup")
    ax.axhline(tol, color="black", ls="--", lw=0.9, label="tolerance")
    ax.set_xlabel("cumulative time [s]")
    ax.set_ylabel("relative residual")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def fig_field(values, dims, out_path, log=True, title=None, cmap="viridis"):
    """Render a cell field; 3D fields show the middle z-slice."""
    arr = np.asarray(values).reshape(dims, order="F")
    if len(dims) == 3:
        arr = arr[:, :, dims[2] // 2]
    img = arr.T  # (ny, nx) with y upward
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    norm = None
    if log and img.min() > 0 and img.max() / img.min() > 50:
        norm = LogNorm(vmin=img.min(), vmax=img.max())
    im = ax.imshow(img, origin="lower", extent=(0, 1, 0, 1),
                   norm=norm, cmap=cmap, interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def fig_comparison(curves, out_path, tol=1e-8, title=None):
    """Overlay several time-to-accuracy curves: curves = [(label, rows)]."""
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    for label, rows in curves:
        xs = [r["elapsed_seconds"] for r in rows]
        ys = [max(r["relative_residual"], 1e-300) for r in rows]
        ax.semilogy(xs, ys, lw=1.3, label=label)
        setup_rows = [r for r in rows if r["phase"] == "setup"]
        if setup_rows:
            ax.axvline(setup_rows[-1]["elapsed_seconds"], ls=":",
                       lw=0.8, color=ax.lines[-1].get_color())
    ax.axhline(tol, color="black", ls="--", lw=0.9)
    ax.set_xlabel("cumulative time [s]")
    ax.set_ylabel("relative residual")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
