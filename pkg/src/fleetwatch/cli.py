"""Command line entry point: ``fleetwatch generate | run | sweep | report``."""

from __future__ import annotations

import csv
import logging
import sys
from pathlib import Path

import click

from .config import ConfigError, load_config
from .harness import SWEEP_THRESHOLDS, run_experiment, write_outputs, write_sweep
from .synthfleet import generate_fleet

config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                              help="INI experiment file (defaults apply when omitted).")
seed_option = click.option("--seed", type=int, default=None, help="Override the configured seed.")
out_option = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                          help="Override the output directory.")


def _load(config_path, seed=None, out_dir=None, workers=None):
    try:
        return load_config(config_path).with_overrides(seed, out_dir, workers)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Fleet-based fault detection experiments on sensor time series."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@config_option
@seed_option
@out_option
def generate(config_path, seed, out_dir):
    """Write a synthetic fleet (CSVs, manifest, ground truth)."""
    cfg = _load(config_path, seed)
    target = Path(out_dir) if out_dir is not None else cfg.fleet_dir
    try:
        manifest = generate_fleet(cfg.fleet_config(), cfg.seed, target)
    except (OSError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(str(manifest))


@main.command()
@config_option
@seed_option
@out_option
@click.option("--workers", type=int, default=None, help="Worker processes for independent runs.")
def run(config_path, seed, out_dir, workers):
    """Run the configured strategies on every target unit."""
    cfg = _load(config_path, seed, out_dir, workers)
    if not Path(cfg.manifest).is_file():
        raise click.ClickException(f"manifest not found: {cfg.manifest} (run `generate` first)")
    try:
        result = run_experiment(cfg)
    except (OSError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    out = write_outputs(result, cfg)
    n_failed = sum(r.error is not None for r in result.reports + result.pairs)
    click.echo(f"{len(result.reports)} reports, {len(result.pairs)} pair reports, {n_failed} failed -> {out}")
    if result.all_failed:
        sys.exit(1)


def _thresholds(ctx, param, value):
    if value is None:
        return SWEEP_THRESHOLDS
    try:
        ths = tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc
    if not ths:
        raise click.BadParameter("at least one threshold is required")
    return ths


@main.command()
@config_option
@out_option
@click.option("--thresholds", callback=_thresholds, default=None,
              help="Comma-separated fp% thresholds (default 1..25).")
def sweep(config_path, out_dir, thresholds):
    """Count valid pairs per false-positive threshold from a finished run."""
    cfg = _load(config_path, out_dir=out_dir)
    try:
        path = write_sweep(cfg.output_dir, thresholds)
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(str(path))


@main.command()
@config_option
@out_option
def report(config_path, out_dir):
    """Print the summary table of a finished run."""
    cfg = _load(config_path, out_dir=out_dir)
    path = Path(cfg.output_dir) / "summary.csv"
    if not path.is_file():
        raise click.ClickException(f"{path} missing: run the experiment first")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    for r in rows:
        click.echo("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
    sweep_path = Path(cfg.output_dir) / "sweep.csv"
    if sweep_path.is_file():
        with open(sweep_path, newline="") as fh:
            recs = list(csv.DictReader(fh))
        click.echo("")
        click.echo("mean valid pairs per unit at fp threshold:")
        for method in sorted({r["method"] for r in recs}):
            mine = [r for r in recs if r["method"] == method]
            units = {r["unit_id"] for r in mine}
            cells = []
            for th in dict.fromkeys(r["threshold"] for r in mine):
                total = sum(int(r["n_valid"]) for r in mine if r["threshold"] == th)
                cells.append(f"{th}%:{total / len(units):.1f}")
            click.echo(f"  {method}: " + " ".join(cells))


if __name__ == "__main__":
    main()
