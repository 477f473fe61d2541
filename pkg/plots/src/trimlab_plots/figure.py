"""Render convergence figures (ratio vs n, log-x) from experiment CSVs.

The input contract is the harness rows.csv: a header row that includes at
least ``seed``, ``n`` and the selected y-column, one data row per
(seed, checkpoint) pair.  Output is deterministic for identical input:
fixed figure size, fixed dpi, fixed style, stable metadata.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib.backends.backend_agg import FigureCanvasAgg  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

_SEED_STYLE = {"color": "#6baed6", "linewidth": 0.9, "alpha": 0.6}
_MEDIAN_STYLE = {"color": "#d7301f", "linewidth": 2.5}
_REFERENCE_STYLE = {"color": "#333333", "linewidth": 1.0, "linestyle": "--"}


@dataclass(frozen=True)
class FigureSpec:
    """What to plot: input CSV, y-column, reference level, output path."""

    csv_path: str | Path
    out: str | Path
    ycol: str = "ratio_trim"
    ref: float = 1.0
    log_x: bool = True

    def __post_init__(self) -> None:
        if not self.ycol:
            raise ValueError("ycol must be a non-empty column name")


def _read_rows(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: CSV is empty")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: CSV contains a header but no data rows")
    return list(reader.fieldnames), rows


def _series(spec: FigureSpec) -> tuple[dict[str, list[tuple[float, float]]], list[float], list[float]]:
    path = Path(spec.csv_path)
    fieldnames, rows = _read_rows(path)
    for col in ("seed", "n", spec.ycol):
        if col not in fieldnames:
            raise ValueError(
                f"{path}: missing column {col!r}; header has {fieldnames}"
            )

    by_seed: dict[str, list[tuple[float, float]]] = {}
    by_n: dict[float, list[float]] = {}
    for i, row in enumerate(rows, start=2):
        try:
            n = float(row["n"])
            y = float(row[spec.ycol])
        except (TypeError, ValueError) as exc:
            raise ValueError(
                f"{path}: line {i}: non-numeric value in 'n' or {spec.ycol!r}"
            ) from exc
        by_seed.setdefault(row["seed"], []).append((n, y))
        by_n.setdefault(n, []).append(y)

    for pts in by_seed.values():
        pts.sort()
    grid = sorted(by_n)
    medians = [statistics.median(by_n[n]) for n in grid]
    return by_seed, grid, medians


def build_figure(spec: FigureSpec) -> Figure:
    """Build the figure object without writing anything to disk."""
    by_seed, grid, medians = _series(spec)

    fig = Figure(figsize=(8.0, 5.0), dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    for seed in sorted(by_seed):
        ns, ys = zip(*by_seed[seed])
        ax.plot(ns, ys, gid="seed", **_SEED_STYLE)
    ax.plot(grid, medians, gid="median", label="median", **_MEDIAN_STYLE)
    ax.axhline(spec.ref, gid="reference", label=f"reference = {spec.ref:g}",
               **_REFERENCE_STYLE)
    if spec.log_x:
        ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel(spec.ycol)
    ax.legend(loc="best")
    return fig


def render_convergence(spec: FigureSpec) -> Path:
    """Render the convergence figure to a PNG; returns the output path.

    Any input problem raises before the output path is touched, so a failed
    call never leaves a file behind.
    """
    fig = build_figure(spec)
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="png", metadata={"Software": "trimlab-plots"})
    return out
