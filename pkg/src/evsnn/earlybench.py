"""Early event-based recognition benchmark.

Given a trained network and a test split, evaluates Top-K correctness for
growing observation time S (one candidate prediction per input bin, so the
output update period equals the bin duration), tallies cumulative effective
SynOps alongside, and renders tabular / CSV / SVG reports.

The algorithmic-benchmark idealization applies: correctness is timestamped at
S itself; wall-clock time is logged separately.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Network, batch_frames, count_synops
from .preprocess import EncodeSettings, encode_with

GIGA = 1e9
TABLE1_TIMES_S = (0.3, 0.6, 1.0, 1.5, 2.0)
DEFAULT_KS = (1, 3, 5)


@dataclass
class EvalCurve:
    times_s: np.ndarray  # strictly increasing observation times
    topk: dict  # k -> accuracy array aligned with times_s
    delta_t_s: float  # output update period (bin duration)
    macs_cumulative: np.ndarray  # mean cumulative effective MACs per sample
    acs_cumulative: np.ndarray
    num_samples: int = 0
    wall_seconds: float = 0.0
    padded_samples: int = 0

    def validate(self) -> None:
        if np.any(np.diff(self.times_s) <= 0):
            raise ValueError("times must be strictly increasing")
        ks = sorted(self.topk)
        for k in ks:
            acc = self.topk[k]
            if np.any(acc < 0) or np.any(acc > 1):
                raise ValueError("accuracy outside [0, 1]")
        for lo, hi in zip(ks, ks[1:]):
            if np.any(self.topk[lo] > self.topk[hi] + 1e-12):
                raise ValueError("Top-k accuracy must be non-decreasing in k")


@dataclass
class EarlyReadoutConfig:
    early_threshold: float
    final_threshold: float
    k: int = 5


def topk_correct(scores, y: int, k: int) -> bool:
    """True iff y is among the k highest scores; ties break toward the lowest
    class index so results are deterministic."""
    scores = np.asarray(scores, dtype=np.float64)
    c = scores.shape[-1]
    if not 1 <= k <= c:
        raise ValueError(f"k={k} out of range for {c} classes")
    if not 0 <= y < c:
        raise ValueError(f"label {y} out of range")
    # Sort by (-score, index): stable deterministic top-k set.
    order = np.lexsort((np.arange(c), -scores))
    return int(y) in set(order[:k].tolist())


def topk_set(scores, k: int) -> list[int]:
    scores = np.asarray(scores, dtype=np.float64)
    c = scores.shape[-1]
    order = np.lexsort((np.arange(c), -scores))
    return order[:k].tolist()


def _running_mean(v: np.ndarray) -> np.ndarray:
    """Running mean over the leading (time) axis."""
    counts = np.arange(1, v.shape[0] + 1, dtype=np.float64)
    return np.cumsum(v, axis=0) / counts.reshape(-1, *([1] * (v.ndim - 1)))


def evaluate_early(net: Network, dataset, encode_settings: EncodeSettings,
                   duration_us: int, readout: str = "mean",
                   ks=DEFAULT_KS, sample_times_s=None,
                   batch_size: int = 32) -> EvalCurve:
    """Top-K accuracy over observation time on (EventStream, label) pairs.

    Each sample is encoded from the beginning of its recording for
    `duration_us`; one forward pass yields the full readout history, from
    which the running-mean ("mean") or instantaneous ("last") scores at every
    bin are thresholded into Top-K correctness. Samples shorter than the
    evaluation window are zero-padded and flagged.
    """
    if readout not in ("mean", "last"):
        raise ValueError(f"unknown readout {readout!r}")
    bin_us = encode_settings.bin_us
    t_bins = -(-duration_us // bin_us)
    all_times = np.arange(1, t_bins + 1) * (bin_us / 1e6)
    if sample_times_s is None:
        idx = np.arange(t_bins)
    else:
        wanted = np.asarray(sorted(sample_times_s), dtype=np.float64)
        if np.any(wanted > all_times[-1] + 1e-9):
            raise ValueError("sample time beyond evaluation duration")
        # Last bin whose end time is <= the requested observation time.
        idx = np.clip(
            np.searchsorted(all_times, wanted + 1e-9) - 1, 0, t_bins - 1)
    times = all_times[idx]

    ks = sorted(ks)
    correct = {k: np.zeros(len(idx), dtype=np.int64) for k in ks}
    macs_cum = np.zeros(t_bins, dtype=np.float64)
    acs_cum = np.zeros(t_bins, dtype=np.float64)
    padded = 0
    t0 = time.monotonic()

    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        seqs = []
        for stream, _ in chunk:
            if stream.duration_us < duration_us:
                padded += 1
            seqs.append(encode_with(stream, encode_settings, 0, duration_us))
        trace = net.forward(batch_frames(seqs), mode="eval", count_ops=True)
        report = count_synops(trace, net)
        macs_cum += report.macs_cumulative
        acs_cum += report.acs_cumulative
        v = trace.readout  # [T, N, C]
        scores = _running_mean(v) if readout == "mean" else v
        for j, (_, label) in enumerate(chunk):
            sample_scores = scores[idx, j]  # [len(idx), C]
            for k in ks:
                for i, row in enumerate(sample_scores):
                    correct[k][i] += topk_correct(row, label, k)

    n = max(1, len(dataset))
    curve = EvalCurve(
        times_s=times,
        topk={k: correct[k] / n for k in ks},
        delta_t_s=bin_us / 1e6,
        macs_cumulative=macs_cum[idx] / n,
        acs_cumulative=acs_cum[idx] / n,
        num_samples=len(dataset),
        wall_seconds=time.monotonic() - t0,
        padded_samples=padded,
    )
    curve.validate()
    return curve


def early_readout_neuron(v_history: np.ndarray, config: EarlyReadoutConfig):
    """Two-threshold early-recognition readout.

    Early output: fires at most once, at the first step where the maximum
    class potential reaches the early threshold, emitting that step's Top-k
    class set. Final output: argmax of the running-mean potential at the
    first step where its maximum reaches the final threshold, falling back to
    the full-sequence mean if it never does.
    """
    v = np.asarray(v_history, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValueError("v_history must be a non-empty [T, C] array")

    early = None
    peaks = v.max(axis=1)
    hits = np.flatnonzero(peaks >= config.early_threshold)
    if len(hits):
        t = int(hits[0])
        early = (t, topk_set(v[t], config.k))

    means = _running_mean(v)
    mean_peaks = means.max(axis=1)
    final_hits = np.flatnonzero(mean_peaks >= config.final_threshold)
    t_final = int(final_hits[0]) if len(final_hits) else v.shape[0] - 1
    final = topk_set(means[t_final], 1)[0]
    return early, final


def emit_reports(curve: EvalCurve, out_dir, prefix: str = "eval") -> dict:
    """Write the CSV, the two SVG plots, and the markdown summary table.

    Returns the paths of the written files.
    """
    curve.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ks = sorted(curve.topk)
    paths = {}

    csv_path = out_dir / f"{prefix}_curve.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s"] + [f"top{k}" for k in ks]
                        + ["macs_g", "acs_g"])
        for i, t in enumerate(curve.times_s):
            writer.writerow(
                [repr(float(t))]
                + [repr(float(curve.topk[k][i])) for k in ks]
                + [repr(float(curve.macs_cumulative[i] / GIGA)),
                   repr(float(curve.acs_cumulative[i] / GIGA))]
            )
    paths["csv"] = csv_path

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for k in ks:
        ax.plot(curve.times_s, curve.topk[k], label=f"Top-{k}")
    ax.set_xlabel("observation time [s]")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    time_plot = out_dir / f"{prefix}_accuracy_over_time.svg"
    fig.savefig(time_plot, format="svg")
    plt.close(fig)
    paths["accuracy_over_time"] = time_plot

    fig, ax = plt.subplots(figsize=(6, 4))
    synops = (curve.macs_cumulative + curve.acs_cumulative) / GIGA
    for k in ks:
        ax.plot(synops, curve.topk[k], label=f"Top-{k}")
    ax.set_xlabel("cumulative effective SynOps [G]")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    synops_plot = out_dir / f"{prefix}_accuracy_over_synops.svg"
    fig.savefig(synops_plot, format="svg")
    plt.close(fig)
    paths["accuracy_over_synops"] = synops_plot

    md_path = out_dir / f"{prefix}_table.md"
    grid = [t for t in TABLE1_TIMES_S if t <= curve.times_s[-1] + 1e-9]
    if not grid:
        grid = list(curve.times_s)
    rows = []
    for t in grid:
        i = int(np.argmin(np.abs(curve.times_s - t)))
        rows.append((t, i))
    with open(md_path, "w") as fh:
        header = (["Time (s)"] + [f"Top-{k} (%)" for k in ks]
                  + ["MACs (G)", "ACs (G)"])
        fh.write("| " + " | ".join(header) + " |\n")
        fh.write("|" + "---|" * len(header) + "\n")
        for t, i in rows:
            cells = [f"{t:.1f}"]
            cells += [f"{100 * curve.topk[k][i]:.1f}" for k in ks]
            cells += [f"{curve.macs_cumulative[i] / GIGA:.4g}",
                      f"{curve.acs_cumulative[i] / GIGA:.4g}"]
            fh.write("| " + " | ".join(cells) + " |\n")
    paths["table"] = md_path
    return paths


def read_curve_csv(path) -> dict:
    """Parse an emitted curve CSV back into arrays (round-trip helper)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    out = {name: np.array([float(r[name]) for r in rows])
           for name in reader.fieldnames}
    return out
