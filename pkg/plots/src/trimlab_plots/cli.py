"""Command line entry point: plot-convergence."""

from __future__ import annotations

import click

from trimlab_plots.figure import FigureSpec, render_convergence


@click.command()
@click.option("--csv", "csv_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Experiment rows CSV (harness column contract).")
@click.option("--ycol", default="ratio_trim", show_default=True,
              help="Column plotted on the y axis.")
@click.option("--ref", default=1.0, show_default=True, type=float,
              help="Reference level drawn as a horizontal line.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Output PNG path.")
@click.option("--linear-x", is_flag=True, default=False,
              help="Use a linear x axis instead of log.")
def main(csv_path: str, ycol: str, ref: float, out: str, linear_x: bool) -> None:
    """Render one convergence figure: thin per-seed curves, bold
    per-checkpoint median, and a horizontal reference line."""
    spec = FigureSpec(csv_path=csv_path, out=out, ycol=ycol, ref=ref,
                      log_x=not linear_x)
    try:
        path = render_convergence(spec)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(str(path))


if __name__ == "__main__":
    main()
