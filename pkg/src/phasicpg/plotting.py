"""Learning-curve figures rendered to SVG.

Curves are smoothed with an exponential moving average at plot time only; CSVs on
disk always hold raw per-iteration values. Multiple runs under one label are drawn
as their mean with a +-1 std band.
"""
from __future__ import annotations

import warnings
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .phasic import MetricsRow, read_metrics  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "svg.hashsalt": "phasicpg",
    "svg.fonttype": "path",
}


def ema(values: Sequence[float], window: int) -> np.ndarray:
    """EMA with coefficient ``2 / (window + 1)``; gaps (NaN) carry the last value."""
    alpha = 2.0 / (max(window, 1) + 1.0)
    out = np.empty(len(values))
    acc = np.nan
    for i, v in enumerate(values):
        if v is not None and np.isfinite(v):
            acc = v if np.isnan(acc) else (1 - alpha) * acc + alpha * v
        out[i] = acc
    return out


def returns_curve(rows: Sequence[MetricsRow], window: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([r.env_steps for r in rows], dtype=float)
    y = ema([np.nan if r.episode_return_mean is None else r.episode_return_mean for r in rows], window)
    return x, y


def _step_formatter(value, _pos):
    for div, suffix in ((1e6, "M"), (1e3, "k")):
        if abs(value) >= div:
            return f"{value / div:g}{suffix}"
    return f"{value:g}"


def plot_groups(
    groups: Mapping[str, Sequence[Sequence[MetricsRow]]],
    out: str | Path,
    window: int = 10,
    title: str | None = None,
) -> Path:
    """One curve per label: mean over its runs with a +-1 std band when >1 run."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, runs in groups.items():
            curves = [returns_curve(rows, window) for rows in runs]
            n = min(len(x) for x, _ in curves)
            x = curves[0][0][:n]
            ys = np.stack([y[:n] for _, y in curves])
            # columns before the first finished episode are all NaN
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mean = np.nanmean(ys, axis=0)
                std = np.nanstd(ys, axis=0)
            (line,) = ax.plot(x, mean, label=label, lw=1.5)
            if len(curves) > 1:
                ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(f"episode return (EMA, window {window})")
        ax.xaxis.set_major_formatter(matplotlib.ticker.FuncFormatter(_step_formatter))
        if title:
            ax.set_title(title)
        if len(groups) > 1:
            ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out


def plot_runs(run_dirs: Sequence[str | Path], out: str | Path, window: int = 10, labels: Sequence[str] | None = None) -> Path:
    """Group run directories by label (from ``labels`` or each run's ``label`` file)."""
    groups: dict[str, list[list[MetricsRow]]] = {}
    for i, d in enumerate(run_dirs):
        d = Path(d)
        csv_path = d / "metrics.csv" if d.is_dir() else d
        try:
            rows = read_metrics(csv_path)
        except (OSError, ValueError) as exc:
            raise ValueError(f"cannot plot {csv_path}: {exc}") from exc
        label = labels[i] if labels else _run_label(csv_path.parent)
        groups.setdefault(label, []).append(rows)
    return plot_groups(groups, out, window)


def _run_label(run_dir: Path) -> str:
    marker = run_dir / "label"
    if marker.exists():
        return marker.read_text().strip()
    return run_dir.parent.name if run_dir.name.startswith("seed_") else run_dir.name
