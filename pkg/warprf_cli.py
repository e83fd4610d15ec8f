#!/usr/bin/env python3
"""
WarpRF command line: render scenes, estimate uncertainty, evaluate it, and run
active view selection experiments.
"""

import dataclasses
import functools
import json
import sys
import time
from pathlib import Path
from typing import Optional

import click
from rich.console import Console

from helpers import experiment_helper
from helpers.config_helper import (
    ExperimentConfig,
    ensure_output_directory,
    load_config,
    save_config,
    serialize_config,
)
from helpers.io_helper import ResultBundle
from helpers.models import POLICY_KINDS, WarpRFError

console = Console(stderr=True)


def fail(exc: Exception) -> None:
    """One machine-parsable line on stderr, exit status 1."""
    message = str(exc).replace("\n", " ")
    click.echo(f"error: {type(exc).__name__}: {message}", err=True)
    sys.exit(1)


def guarded(command):
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (WarpRFError, OSError) as exc:
            fail(exc)
    return wrapper


def experiment_options(command):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="Experiment config (JSON). Defaults are used when omitted."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                     help="Output directory (overrides WARPRF_OUTPUT_DIR and the config)."),
        click.option("--seed", type=click.IntRange(min=0), default=None, help="Experiment seed."),
        click.option("--threads", type=click.IntRange(min=1), default=None, help="Candidate scoring threads."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def prepare(config_path: Optional[str], out_dir: Optional[str], seed: Optional[int],
            threads: Optional[int], command: str):
    config = load_config(config_path) if config_path else ExperimentConfig()
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if threads is not None:
        overrides["threads"] = threads
    if overrides:
        config = dataclasses.replace(config, **overrides)
    out = ensure_output_directory(config, out_dir)
    bundle = ResultBundle(out, serialize_config(config), command)
    save_config(config, bundle.path("config.json"))
    return config, bundle


@click.group()
@click.option("--quiet", is_flag=True, help="Silence progress output on stderr.")
def cli(quiet: bool):
    """WarpRF: training-free uncertainty and active view selection for radiance fields."""
    experiment_helper.set_quiet(quiet)
    console.quiet = quiet


@cli.command()
@experiment_options
@click.option("--views", type=click.Choice(["candidates", "initial", "eval"]), default="candidates",
              show_default=True, help="Which configured view set to render.")
@guarded
def render(config_path, out_dir, seed, threads, views):
    """Render image (PPM) and depth (PFM) files for a view set."""
    started = time.perf_counter()
    config, bundle = prepare(config_path, out_dir, seed, threads, "render")
    count = experiment_helper.render_views(config, bundle, views)
    bundle.finalize(time.perf_counter() - started, {"views": count})


@cli.command()
@experiment_options
@click.option("--mode", type=click.Choice(["pixel", "image"]), default=None,
              help="Per-pixel depth consistency or image-level color score.")
@guarded
def uncertainty(config_path, out_dir, seed, threads, mode):
    """Estimate uncertainty of every candidate from the initial views."""
    started = time.perf_counter()
    config, bundle = prepare(config_path, out_dir, seed, threads, "uncertainty")
    rows = experiment_helper.uncertainty_scores(config, bundle, mode)
    bundle.finalize(time.perf_counter() - started, {"targets": len(rows)})


@cli.command()
@click.option("--uncertainty", "uncertainty_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--error", "error_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional PFM; pixels with positive values are evaluated.")
@click.option("--bins", type=click.IntRange(min=2), default=100, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@guarded
def ause(uncertainty_path, error_path, mask_path, bins, out_dir):
    """Area under the sparsification error; prints the value on stdout."""
    started = time.perf_counter()
    out = ensure_output_directory(ExperimentConfig(), out_dir)
    arguments = {"uncertainty": uncertainty_path, "error": error_path, "mask": mask_path, "bins": bins}
    bundle = ResultBundle(out, json.dumps(arguments, sort_keys=True), "ause")
    value = experiment_helper.ause_from_files(uncertainty_path, error_path, bundle, mask_path, bins)
    bundle.finalize(time.perf_counter() - started, {"ause": value})
    click.echo(value)


@cli.command()
@experiment_options
@click.option("--policy", type=click.Choice(POLICY_KINDS), default=None)
@guarded
def select(config_path, out_dir, seed, threads, policy):
    """Score the candidate pool once and print the next best view."""
    started = time.perf_counter()
    config, bundle = prepare(config_path, out_dir, seed, threads, "select")
    selected = experiment_helper.select_view(config, bundle, policy)
    bundle.finalize(time.perf_counter() - started, {"selected": selected})
    click.echo(selected)


@cli.command("active-loop")
@experiment_options
@click.option("--policy", type=click.Choice(POLICY_KINDS), default=None)
@click.option("--rounds", type=click.IntRange(min=1), default=None)
@guarded
def active_loop(config_path, out_dir, seed, threads, policy, rounds):
    """Run the full fit / score / select loop and log every round."""
    started = time.perf_counter()
    config, bundle = prepare(config_path, out_dir, seed, threads, "active-loop")
    try:
        records = experiment_helper.active_loop(config, bundle, policy, rounds, threads)
    except WarpRFError:
        bundle.finalize(time.perf_counter() - started, {"completed": False})
        raise
    bundle.finalize(time.perf_counter() - started, {"completed": True, "rounds": len(records)})


@cli.command()
@click.argument("kind", type=click.Choice(["image", "depth", "cloud"]))
@click.argument("first", type=click.Path(exists=True, dir_okay=False))
@click.argument("second", type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=float, default=0.05, show_default=True, help="Cloud distance threshold (m).")
@click.option("--downsample", type=float, default=None, help="Voxel size for cloud downsampling (m).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@guarded
def metrics(kind, first, second, threshold, downsample, out_dir):
    """Compare two images (PPM), depth maps (PFM) or point clouds (.xyz)."""
    started = time.perf_counter()
    out = ensure_output_directory(ExperimentConfig(), out_dir)
    arguments = {"kind": kind, "first": first, "second": second, "threshold": threshold, "downsample": downsample}
    bundle = ResultBundle(out, json.dumps(arguments, sort_keys=True), "metrics")
    values = experiment_helper.pairwise_metrics(kind, first, second, threshold, downsample)
    experiment_helper.write_metrics(bundle, values)
    bundle.finalize(time.perf_counter() - started)
    click.echo(json.dumps(values, sort_keys=True))


@cli.command()
def selftest():
    """Run the oracle-backed test suite."""
    import pytest

    tests = Path(__file__).resolve().parent / "tests"
    sys.exit(pytest.main(["-q", "-m", "oracle", str(tests)]))


if __name__ == "__main__":
    cli()
