"""Figures for experiment reports, rendered headless to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import CostReport  # noqa: E402

ARCH_COLORS = {"GC": "#990000", "GCNN": "#011F5B", "GRNN": "#2E7D32"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "flockgnn",  # stable element ids across runs
}

LABELS = {
    "velocity": "initial velocity range [m/s]",
    "radius": "communication radius [m]",
    "n_agents": "number of agents",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def plot_lines(report: CostReport, path: str | Path, relative: bool = True,
               skip: tuple[str, ...] = ()) -> Path:
    """Mean (and std band) of each architecture against the swept parameter."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 2.4))
        archs = sorted({c.arch for c in report.cells}, key=list(ARCH_COLORS).index)
        for arch in archs:
            if arch in skip:
                continue
            cells = sorted((c for c in report.cells if c.arch == arch), key=lambda c: c.value)
            x = np.array([c.value for c in cells])
            y = np.array([c.mean(relative) for c in cells])
            s = np.array([c.std(relative) for c in cells])
            color = ARCH_COLORS.get(arch)
            ax.plot(x, y, marker="o", ms=3, lw=1.2, color=color, label=arch)
            ax.fill_between(x, y - s, y + s, color=color, alpha=0.15, lw=0)
        parameter = report.cells[0].parameter if report.cells else ""
        ax.set_xlabel(LABELS.get(parameter, parameter))
        ax.set_ylabel("cost relative to expert" if relative else "cost")
        ax.legend(frameon=False)
        fig.tight_layout()
        # inside the context so the hash salt applies to element ids
        return _save(fig, path)


def plot_sweep(report: CostReport, path: str | Path) -> Path:
    """One heatmap of mean cost over (G, K) per architecture."""
    archs = sorted({c.arch for c in report.cells}, key=list(ARCH_COLORS).index)
    Gs = sorted({c.G for c in report.cells})
    Ks = sorted({c.K for c in report.cells})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(archs), figsize=(2.6 * len(archs), 2.4), squeeze=False)
        for ax, arch in zip(axes[0], archs):
            grid = np.full((len(Gs), len(Ks)), np.nan)
            for c in report.cells:
                if c.arch == arch:
                    grid[Gs.index(c.G), Ks.index(c.K)] = c.mean()
            im = ax.imshow(grid, cmap="viridis_r", aspect="auto")
            for i in range(len(Gs)):
                for j in range(len(Ks)):
                    if np.isfinite(grid[i, j]):
                        ax.text(j, i, f"{grid[i, j]:.0f}", ha="center", va="center", fontsize=7, color="w")
            ax.set_xticks(range(len(Ks)), [str(k) for k in Ks])
            ax.set_yticks(range(len(Gs)), [str(g) for g in Gs])
            ax.set_xlabel("K")
            ax.set_ylabel("G")
            ax.set_title(arch)
            fig.colorbar(im, ax=ax, shrink=0.8)
        fig.tight_layout()
        return _save(fig, path)
