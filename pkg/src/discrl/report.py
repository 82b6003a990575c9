"""Figures for a run directory (Agg backend, PNG next to the CSVs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def figsize(width: float = 5.0) -> tuple[float, float]:
    return width, width * GOLDEN


def _band(ax, x, runs, label, color=None):
    mean, std = runs.mean(axis=0), runs.std(axis=0)
    line, = ax.plot(x, mean, label=label, color=color, lw=1.2)
    ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2, lw=0)
    return line


# (column, y label, log scale)
PANELS = (
    ("mean_rho_dev", "mean IS deviation", False),
    ("frac_clipped", "fully clipped fraction", False),
    ("batches_selected", "batches selected", False),
    ("alpha_is", "alpha_is", True),
    ("j_is", "J_IS", True),
    ("value_loss", "value loss", True),
)


def render_run(run_dir: str | Path, stacked: dict[str, np.ndarray], ma: np.ndarray, summary) -> list[Path]:
    """Return curve plus one panel per diagnostic; mean across seeds with a +-1 std band."""
    fig_dir = Path(run_dir) / "figures"
    fig_dir.mkdir(exist_ok=True)
    x = stacked["iteration"][0]
    written = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        _band(ax, x, stacked["eval_return"], "raw")
        _band(ax, x, ma, "10-iteration moving average")
        if np.isfinite(summary.initial_return):
            ax.axhline(summary.initial_return, color="0.5", ls=":", lw=1, label="initial policy")
        ax.set_xlabel("iteration")
        ax.set_ylabel("deterministic return")
        ax.set_title(f"{summary.mode}, {len(summary.seeds)} seeds", fontsize=9)
        ax.legend(frameon=False)
        fig.tight_layout()
        written.append(fig_dir / "return.png")
        fig.savefig(written[-1])
        plt.close(fig)

        fig, axes = plt.subplots(2, 3, figsize=(9.0, 9.0 * GOLDEN * 2 / 3))
        for ax, (col, label, log) in zip(axes.flat, PANELS):
            runs = stacked[col]
            if log and np.all(runs > 0):
                ax.set_yscale("log")
            _band(ax, x, runs, label)
            ax.set_xlabel("iteration")
            ax.set_ylabel(label)
        fig.tight_layout()
        written.append(fig_dir / "diagnostics.png")
        fig.savefig(written[-1])
        plt.close(fig)
    return written


def render_comparison(runs: dict[str, Path], out: str | Path, column: str = "eval_return") -> Path:
    """Overlay one metric from several run directories (e.g. ppo vs disc)."""
    from .runs import read_metrics

    out = Path(out)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for label, run_dir in runs.items():
            files = sorted(Path(run_dir).glob("seed_*/metrics.csv"))
            series = [read_metrics(f) for f in files]
            n = min(len(s["iteration"]) for s in series)
            _band(ax, series[0]["iteration"][:n], np.stack([s[column][:n] for s in series]), label)
        ax.set_xlabel("iteration")
        ax.set_ylabel(column.replace("_", " "))
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(out)
        plt.close(fig)
    return out
