"""Command line entry points.

Exit codes: 0 = success and all asserted invariants held,
2 = an invariant or acceptance check failed, 3 = configuration error.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from .dynamics import make_map
from .errors import ConfigError, InvariantViolation, TrimlabError
from .harness import (
    ExperimentSpec,
    check_acceptance,
    emit_results,
    plan_to_csv,
    run_experiment,
    summarize,
)
from .spectral import (
    bin_average,
    build_ulam,
    leading_eigen,
    perturbed_leading_eigenvalue,
    spectral_gap,
)

_EXIT_INVARIANT = 2
_EXIT_CONFIG = 3


def _load_spec(config: str) -> ExperimentSpec:
    try:
        return ExperimentSpec.from_path(config)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)


@click.group()
def main() -> None:
    """Numerical laboratory for trimmed and truncated Birkhoff sums."""


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, type=click.Path(file_okay=False))
@click.option("--threads", default=1, show_default=True,
              help="Reserved for seed-parallel execution; results are "
                   "identical for any value.")
def verify(config: str, out: str | None, threads: int) -> None:
    """Run an experiment and check its acceptance block."""
    spec = _load_spec(config)
    try:
        result = run_experiment(spec)
    except InvariantViolation as exc:
        click.echo(f"invariant violation: {exc}", err=True)
        sys.exit(_EXIT_INVARIANT)
    except TrimlabError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    summary = summarize(result)
    files = emit_results(result, summary, out)
    failures = check_acceptance(result, summary)
    for name, path in files.items():
        click.echo(f"{name}: {path}")
    if failures:
        for f in failures:
            click.echo(f"FAIL {f}", err=True)
        sys.exit(_EXIT_INVARIANT)
    click.echo("ok")


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, type=click.Path(file_okay=False))
def simulate(config: str, out: str | None) -> None:
    """Run an experiment and persist rows/summary without judging them."""
    spec = _load_spec(config)
    try:
        result = run_experiment(spec)
    except InvariantViolation as exc:
        click.echo(f"invariant violation: {exc}", err=True)
        sys.exit(_EXIT_INVARIANT)
    except TrimlabError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    summary = summarize(result)
    files = emit_results(result, summary, out)
    for name, path in files.items():
        click.echo(f"{name}: {path}")


@main.command(name="trim-plan")
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def trim_plan(config: str, out: str | None) -> None:
    """Emit the trimming plan and hypothesis-ratio diagnostics as CSV."""
    spec = _load_spec(config)
    try:
        csv_text = plan_to_csv(spec)
    except TrimlabError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    if out:
        with open(out, "w") as fh:
            fh.write(csv_text)
        click.echo(f"plan: {out}")
    else:
        click.echo(csv_text, nl=False)


@main.command()
@click.option("--map", "map_name", required=True,
              type=click.Choice(["doubling", "gauss", "identity"]))
@click.option("--bins", required=True, type=int)
@click.option("--method", default="analytic", show_default=True,
              type=click.Choice(["analytic", "mc"]))
@click.option("--samples", default=10**6, show_default=True, type=int)
@click.option("--matrix-out", default=None, type=click.Path(dir_okay=False),
              help="Optional row-major CSV dump of the matrix.")
def ulam(map_name: str, bins: int, method: str, samples: int,
         matrix_out: str | None) -> None:
    """Build the bin-transfer operator and print its spectral report."""
    try:
        op = build_ulam(make_map(map_name), bins, method=method, samples=samples)
        report = leading_eigen(op)
        rho = spectral_gap(op, report)
    except (ValueError, TrimlabError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    if matrix_out:
        np.savetxt(matrix_out, op.P, delimiter=",")
        click.echo(f"matrix: {matrix_out}", err=True)
    click.echo(json.dumps({
        "map": map_name,
        "bins": bins,
        "buildMethod": op.build_method,
        "leadingEigenvalue": report.leading_eigenvalue,
        "secondModulus": rho,
        "stationary": report.stationary.tolist(),
        "residuals": report.residuals,
        "flags": list(report.flags) + list(op.warnings),
    }, indent=2))


@main.command(name="lambda-curve")
@click.option("--map", "map_name", default="doubling", show_default=True,
              type=click.Choice(["doubling", "gauss"]))
@click.option("--bins", default=64, show_default=True, type=int)
@click.option("--phi", default="coin", show_default=True,
              type=click.Choice(["coin"]),
              help="Centered observable: coin = indicator of [0,1/2) minus 1/2.")
@click.option("--t-min", default=-1.0, show_default=True, type=float)
@click.option("--t-max", default=1.0, show_default=True, type=float)
@click.option("--t-steps", default=21, show_default=True, type=int)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def lambda_curve(map_name: str, bins: int, phi: str, t_min: float,
                 t_max: float, t_steps: int, out: str | None) -> None:
    """Leading eigenvalue of the multiplication-perturbed operator over t."""
    if t_steps < 1 or t_max < t_min:
        click.echo("config error: bad t grid", err=True)
        sys.exit(_EXIT_CONFIG)
    try:
        op = build_ulam(make_map(map_name), bins)
        report = leading_eigen(op)
        raw = bin_average(op, lambda x: (np.asarray(x) < 0.5).astype(float))
        phi_bar = raw - float(report.stationary @ raw)  # center under pi
        ts = np.linspace(t_min, t_max, t_steps)
        curve = perturbed_leading_eigenvalue(op, phi_bar, ts, report)
    except (ValueError, TrimlabError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    lines = ["t,lambda_t,label"]
    for p in curve:
        lines.append(f"{p.t!r},{p.lam!r},{p.label}")
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        click.echo(f"curve: {out}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
