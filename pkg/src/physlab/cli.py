"""``physlab`` command line: list, validate and run experiment presets."""
from __future__ import annotations

import sys

import click

from . import experiments as ex

EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 2, 3, 4


def _overrides(config_file, sets) -> dict[str, str]:
    out = ex.read_config_file(config_file) if config_file else {}
    for item in sets:
        if "=" not in item:
            raise ex.ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@click.group()
@click.version_option(package_name="artifact", prog_name="physlab")
def main():
    """Reproducible experiment presets for learned communication systems."""


@main.command("list")
def list_cmd():
    """Show the registered presets."""
    names = ex.list_presets()
    pad = max(len(n) for n, _, _ in names)
    for name, _, desc in names:
        click.echo(f"{name.ljust(pad)}  {desc}")


@main.command()
@click.option("--preset", required=True)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None,
              help="flat key = value file; --set entries win")
def validate(preset, sets, config_file):
    """Check a configuration without running it."""
    try:
        violations, warnings = ex.validate(preset, _overrides(config_file, sets))
    except ex.ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for w in warnings:
        click.echo(f"warning: {w}")
    if violations:
        for v in violations:
            click.echo(f"violation: {v}")
        sys.exit(EXIT_CONFIG)
    click.echo("ok")


@main.command()
@click.option("--preset", required=True)
@click.option("--seed", required=True, type=int)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def run(preset, seed, sets, config_file, out_dir):
    """Run a preset and write CSV files plus manifest.json into --out."""
    try:
        manifest = ex.run(preset, seed, _overrides(config_file, sets), out_dir)
    except ex.ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except ex.DivergenceError as exc:
        click.echo(f"diverged: {exc} (outputs and manifest were still written)", err=True)
        sys.exit(EXIT_DIVERGED)
    except ex.OutputError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        sys.exit(EXIT_IO)
    click.echo(f"{preset} [{manifest['tier']}] wrote {len(manifest['files'])} files to {out_dir} "
               f"in {manifest['elapsed_seconds']:.1f} s")


if __name__ == "__main__":
    main()
