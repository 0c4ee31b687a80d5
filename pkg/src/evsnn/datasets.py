"""Synthetic dataset materialization and manifest I/O.

A dataset directory holds one event file per sample plus `manifest.csv` with
columns (file, label, pattern). Class indices follow the order of the pattern
list used at generation time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .events import EventStream, generate_synthetic, read_stream, write_stream


@dataclass
class GenerateSpec:
    classes: list = field(default_factory=lambda: ["bar_left", "bar_right"])
    samples_per_class: int = 10
    width: int = 32
    height: int = 32
    duration_us: int = 500_000
    rate: float = 20_000.0
    seed: int = 0


def generate_dataset(spec: GenerateSpec, out_dir, force: bool = False) -> Path:
    """Write event files + manifest for the given spec; idempotent per seed."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(
            f"{out_dir} exists and is not empty (use force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, pattern in enumerate(spec.classes):
        for i in range(spec.samples_per_class):
            sample_seed = int(np.random.SeedSequence(
                [spec.seed, label, i]).generate_state(1)[0])
            stream = generate_synthetic(
                pattern, (spec.width, spec.height),
                spec.duration_us, spec.rate, sample_seed)
            name = f"{pattern}_{i:04d}.evs"
            write_stream(stream, out_dir / name)
            rows.append((name, label, pattern))
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "label", "pattern"])
        writer.writerows(rows)
    return out_dir


def load_dataset(root) -> list[tuple[EventStream, int]]:
    """Read every sample listed in a dataset directory's manifest."""
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv under {root}")
    samples = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            stream = read_stream(root / row["file"])
            samples.append((stream, int(row["label"])))
    return samples


def split_dataset(samples, test_fraction: float, seed: int):
    """Deterministic stratified-ish split by shuffling within a fixed seed."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_test = int(round(len(samples) * test_fraction))
    test_idx = set(order[:n_test].tolist())
    train = [s for i, s in enumerate(samples) if i not in test_idx]
    test = [s for i, s in enumerate(samples) if i in test_idx]
    return train, test
