"""Command-line interface: generate | train | eval | inspect.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric divergence.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigValidationError, RunConfig, load_run_config
from .datasets import generate_dataset, load_dataset, split_dataset
from .earlybench import evaluate_early, emit_reports
from .events import (
    StreamCorruptionError,
    StreamFormatError,
    StreamValidationError,
    read_stream,
)
from .network import ConfigError, Network
from .training import TrainingDivergedError, train, write_metrics_csv

EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_DIVERGENCE = 3

_VALIDATION_ERRORS = (ConfigValidationError, ConfigError, StreamValidationError,
                      ValueError)
_IO_ERRORS = (StreamFormatError, StreamCorruptionError, FileExistsError,
              FileNotFoundError, OSError)


def _run(fn):
    try:
        fn()
    except TrainingDivergedError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DIVERGENCE)
    except _IO_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    except _VALIDATION_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


def _load_config(config_path, overrides, seed) -> RunConfig:
    return load_run_config(config_path, list(overrides), seed)


def _dataset_root(config: RunConfig) -> Path:
    if config.dataset.root is not None:
        return Path(config.dataset.root)
    return Path(config.output_dir) / "dataset"


config_argument = click.argument("config_path", type=click.Path(exists=True))
override_option = click.option(
    "-o", "--override", "overrides", multiple=True,
    help="Override a config value, e.g. -o train.epochs=5")
seed_option = click.option("--seed", type=int, default=None,
                           help="Override the run seed")


@click.group()
def main():
    """Early event-based recognition with two-stream spiking networks."""


@main.command()
@config_argument
@override_option
@seed_option
@click.option("--force", is_flag=True, help="Overwrite a non-empty dataset dir")
def generate(config_path, overrides, seed, force):
    """Materialize the synthetic dataset described by the config."""

    def body():
        config = _load_config(config_path, overrides, seed)
        spec = config.dataset.generate
        spec.seed = config.seed
        root = _dataset_root(config)
        generate_dataset(spec, root, force=force)
        n = len(spec.classes) * spec.samples_per_class
        click.echo(f"wrote {n} event files + manifest to {root}")

    _run(body)


def _load_splits(config: RunConfig):
    samples = load_dataset(_dataset_root(config))
    return split_dataset(samples, config.dataset.test_fraction, config.seed)


@main.command(name="train")
@config_argument
@override_option
@seed_option
def train_cmd(config_path, overrides, seed):
    """Train a network and write checkpoint + metrics CSV."""

    def body():
        config = _load_config(config_path, overrides, seed)
        train_set, test_set = _load_splits(config)
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        net = Network(config.network, rng_seed=config.seed)
        net, log = train(net, train_set, config.train, config.loss,
                         test_set=test_set, verbose=True)
        net.save(out_dir / "checkpoint.npz")
        write_metrics_csv(log, out_dir / "metrics.csv")
        click.echo(f"checkpoint: {out_dir / 'checkpoint.npz'}")
        click.echo(f"metrics: {out_dir / 'metrics.csv'}")

    _run(body)


@main.command(name="eval")
@config_argument
@click.argument("checkpoints", nargs=-1, required=True,
                type=click.Path(exists=True))
@override_option
@seed_option
def eval_cmd(config_path, checkpoints, overrides, seed):
    """Evaluate checkpoint(s) and emit Top-K reports; several checkpoints
    produce one curve each in a shared comparison plot."""

    def body():
        config = _load_config(config_path, overrides, seed)
        _, test_set = _load_splits(config)
        out_dir = Path(config.output_dir)
        duration_us = config.eval.duration_ms * 1000
        curves = {}
        for ckpt in checkpoints:
            net = Network.load(ckpt)
            if net.config.topology != config.network.topology:
                raise ConfigError(
                    f"checkpoint {ckpt} topology {net.config.topology!r} does "
                    f"not match config {config.network.topology!r}")
            if net.config.input_hw != config.network.input_hw:
                raise ConfigError(
                    f"checkpoint {ckpt} input size {net.config.input_hw} does "
                    f"not match config {config.network.input_hw}")
            label = (f"{Path(ckpt).stem}: {net.config.neuron_kind}"
                     f"+{net.config.fusion}/{config.loss.kind}"
                     f"/{config.eval.readout}")
            curve = evaluate_early(
                net, test_set, config.encode, duration_us,
                readout=config.eval.readout, ks=config.eval.ks,
                sample_times_s=config.eval.sample_times_s)
            curves[label] = curve
            prefix = f"eval_{Path(ckpt).stem}" if len(checkpoints) > 1 else "eval"
            paths = emit_reports(curve, out_dir, prefix=prefix)
            for kind, p in paths.items():
                click.echo(f"{kind}: {p}")
        if len(curves) > 1:
            shared = emit_comparison_plot(curves, out_dir / "eval_compare.svg")
            click.echo(f"comparison: {shared}")

    _run(body)


def emit_comparison_plot(curves, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, curve in curves.items():
        k = min(curve.topk)
        ax.plot(curve.times_s, curve.topk[k], label=f"{label} (Top-{k})")
    ax.set_xlabel("observation time [s]")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


@main.command()
@click.argument("event_file", type=click.Path(exists=True))
def inspect(event_file):
    """Print header, counts, duration, and an event-rate histogram."""

    def body():
        stream = read_stream(event_file)
        click.echo(f"file: {event_file}")
        click.echo(f"geometry: {stream.sensor_width} x {stream.sensor_height}")
        click.echo(f"events: {stream.event_count}")
        click.echo(f"duration: {stream.duration_us / 1000:.1f} ms")
        if stream.sorted_on_read:
            click.echo("warning: events were re-sorted on read")
        for pol in (0, 1):
            click.echo(f"polarity {pol}: {int(np.sum(stream.p == pol))} events")
        if stream.event_count:
            n_bins = 10
            hist, edges = np.histogram(
                stream.t.astype(np.float64), bins=n_bins,
                range=(0, max(1, stream.duration_us)))
            peak = max(1, hist.max())
            click.echo("event rate histogram:")
            for count, lo in zip(hist, edges[:-1]):
                bar = "#" * int(round(40 * count / peak))
                click.echo(f"  {lo / 1000:8.1f} ms | {bar} {count}")

    _run(body)


if __name__ == "__main__":
    main()
