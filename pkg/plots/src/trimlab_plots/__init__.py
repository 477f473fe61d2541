"""Convergence figures rendered from trimlab experiment CSV outputs.

This package reads only the documented rows.csv column contract; it never
recomputes any numerical quantity.
"""

from trimlab_plots.figure import FigureSpec, build_figure, render_convergence

__all__ = ["FigureSpec", "build_figure", "render_convergence"]
