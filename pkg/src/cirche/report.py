"""Figures for the count tables and block assignments, written as PNG files."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_framework_counts(rows: list[dict], path) -> Path:
    """Grouped log-scale bars of pmult / rot / ct per framework, GEMM and conv panels."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(10, 3.8), sharey=True)
        names = [r["framework"] for r in rows]
        x = np.arange(len(names))
        for ax, kind in zip(axes, ("gemm", "conv")):
            for k, metric in enumerate(("pmult", "rot", "ct")):
                vals = np.array([max(r[f"{kind}_{metric}"], 0) for r in rows], dtype=float)
                # log axis: zero counts drawn at 0.5 and labelled
                ax.bar(x + (k - 1) * 0.27, np.where(vals > 0, vals, 0.5), 0.27, label=metric)
            ax.set_yscale("log")
            ax.set_xticks(x, names, rotation=30, ha="right")
            ax.set_title(kind.upper())
        axes[0].set_ylabel("count (log)")
        axes[0].legend()
        return _save(fig, path)


def plot_printed_vs_ours(rows: list[dict], path) -> Path:
    """Scatter of computed against published rot/pmult; points on the diagonal are exact."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        for ax, metric in zip(axes, ("rot", "pmult")):
            groups = defaultdict(list)
            for r in rows:
                if r[metric] is not None:
                    groups[r["method"]].append((r[f"printed_{metric}"], r[metric]))
            hi = 1.0
            for method, pts in groups.items():
                pts = np.array(pts, dtype=float) + 1.0  # shift for log scale
                ax.scatter(pts[:, 0], pts[:, 1], label=method, s=18)
                hi = max(hi, pts.max())
            ax.plot([1, hi], [1, hi], color="0.4", lw=0.8, ls="--")
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel(f"published {metric} + 1")
            ax.set_ylabel(f"computed {metric} + 1")
        axes[0].legend(fontsize=7)
        return _save(fig, path)


def plot_scaling(rows: list[dict], path) -> Path:
    """Rotations and pmult*b against block size, one line per layer shape."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
        by_layer = defaultdict(list)
        for r in rows:
            by_layer[r["layer"]].append(r)
        for layer, rs in by_layer.items():
            bs = [r["b"] for r in rs]
            axes[0].plot(bs, [r["rot"] for r in rs], marker="o", label=layer)
            axes[1].plot(bs, [r["pmult_x_b"] for r in rs], marker="o")
        for ax in axes:
            ax.set_xscale("log", base=2)
            ax.set_xlabel("block size b")
        axes[0].set_ylabel("HE-Rot")
        axes[1].set_ylabel("HE-Pmult x b")
        axes[1].set_yscale("log")
        axes[0].legend(fontsize=6, ncol=2)
        return _save(fig, path)


def plot_assignment(names: list[str], blocks: list[int], path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.25 * len(names) + 2), 3))
        ax.bar(np.arange(len(blocks)), blocks, color="C2")
        ax.set_yscale("log", base=2)
        ax.set_xticks(np.arange(len(names)), names, rotation=90, fontsize=6)
        ax.set_ylabel("block size")
        if title:
            ax.set_title(title)
        return _save(fig, path)
