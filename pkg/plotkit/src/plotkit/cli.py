"""`plot <kind> <inputs...> -o fig.png`"""
from __future__ import annotations

import sys

import click

from .figures import FigureSpec, SchemaError, render


@click.command()
@click.argument("kind", type=click.Choice(["trajectory", "survival", "kappa", "fluct"]))
@click.argument("inputs", nargs=-1, required=True)
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--theta", type=float, default=1.0, help="time change for trajectory axes")
def main(kind, inputs, output, theta):
    """Render one figure from dbgames output files.

    Inputs are given as role=path pairs (roles: trajectory, ode, survival,
    meeting, kappa, fluct); a bare path is assigned the role matching KIND.
    """
    roles = {}
    for item in inputs:
        if "=" in item:
            role, path = item.split("=", 1)
            roles[role] = path
        else:
            roles.setdefault(kind, item)
    spec = FigureSpec(kind=kind, inputs=roles, style={"theta": theta}, output=output)
    try:
        render(spec)
    except SchemaError as exc:
        click.echo(f"schema error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {output}")


if __name__ == "__main__":
    main()
