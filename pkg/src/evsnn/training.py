"""Loss functions, Adam optimizer, and the seeded training loop.

Three losses over the readout potential history v [T, N, C]:
    cem      - cross entropy of the time-averaged potential
    tet      - mean of per-timestep cross entropies over sampled steps
    combined - unweighted sum of both
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .events import EventStream
from .network import Network, batch_frames
from .preprocess import (
    AugmentSpec,
    EncodeSettings,
    augment,
    encode_with,
    random_crop_window,
)


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class LossSpec:
    kind: str = "cem"  # cem | tet | combined
    tet_sample_count: int | None = None  # None = every timestep

    def validate(self, t_bins: int) -> None:
        if self.kind not in ("cem", "tet", "combined"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.tet_sample_count is not None and not (
            1 <= self.tet_sample_count <= t_bins
        ):
            raise ValueError("tet_sample_count must be in [1, T]")

    def sample_steps(self, t_bins: int) -> list[int]:
        if self.tet_sample_count is None:
            return list(range(t_bins))
        steps = np.linspace(0, t_bins - 1, self.tet_sample_count)
        return sorted(set(int(round(s)) for s in steps))


@dataclass
class TrainConfig:
    epochs: int = 80
    batch_size: int = 16
    lr: float = 1e-3
    lr_final: float = 1e-5
    weight_decay: float = 0.0
    grad_clip: float = 10.0
    window_us: int = 1_000_000  # 1000 ms training crops
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    encode: EncodeSettings = field(default_factory=lambda: EncodeSettings(600, 100))
    rng_seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# ---------------------------------------------------------------------------
# losses


def stack_history(v_history: list[Tensor]) -> Tensor:
    return ad.stack(v_history)


def _as_history(v) -> Tensor:
    return stack_history(v) if isinstance(v, list) else v


def loss_cem(v_history, y) -> Tensor:
    """Cross entropy of the time-averaged readout potential."""
    v = _as_history(v_history)
    return ad.softmax_cross_entropy(ad.tmean(v, axis=0), y)


def loss_tet(v_history, y, sample_steps=None) -> Tensor:
    """Mean of per-sampled-step cross entropies."""
    v = _as_history(v_history)
    t_bins, n, c = v.shape
    if sample_steps is None:
        sample_steps = list(range(t_bins))
    if len(sample_steps) == 0:
        raise ValueError("sample_steps must be non-empty")
    if any(s < 0 or s >= t_bins for s in sample_steps):
        raise ValueError("sample step out of range")
    sel = ad.index_axis0(v, sample_steps)
    flat = sel.reshape((len(sample_steps) * n, c))
    labels = np.tile(np.asarray(y, dtype=np.int64), len(sample_steps))
    return ad.softmax_cross_entropy(flat, labels)


def loss_combined(v_history, y, sample_steps=None) -> Tensor:
    v = _as_history(v_history)
    return loss_cem(v, y) + loss_tet(v, y, sample_steps)


def compute_loss(spec: LossSpec, v_history, y) -> Tensor:
    v = _as_history(v_history)
    t_bins = v.shape[0]
    spec.validate(t_bins)
    if spec.kind == "cem":
        return loss_cem(v, y)
    steps = spec.sample_steps(t_bins)
    if spec.kind == "tet":
        return loss_tet(v, y, steps)
    return loss_combined(v, y, steps)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(t.data) for _, t in params]
        self.v = [np.zeros_like(t.data) for _, t in params]

    @staticmethod
    def _is_dynamic(name: str) -> bool:
        """Neuron/gate dynamic parameters are exempt from weight decay."""
        return ("neuron_" in name or "raw_decay" in name
                or name.endswith(".theta"))

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for i, (name, p) in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and not self._is_dynamic(name):
                g = g + self.weight_decay * p.data
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            p.data = p.data - lr * (self.m[i] / bc1) / (
                np.sqrt(self.v[i] / bc2) + self.eps
            )


def clip_grad_norm(params: list[tuple[str, Tensor]], max_norm: float) -> float:
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    if config.epochs <= 1:
        return config.lr
    frac = epoch / (config.epochs - 1)
    return config.lr_final + 0.5 * (config.lr - config.lr_final) * (
        1.0 + np.cos(np.pi * frac)
    )


# ---------------------------------------------------------------------------
# training loop


def _sample_seed(base: int, epoch: int, idx: int) -> int:
    return int(np.random.SeedSequence([base, epoch, idx]).generate_state(1)[0])


def prepare_sample(stream: EventStream, config: TrainConfig, epoch: int,
                   idx: int):
    seed = _sample_seed(config.rng_seed, epoch, idx)
    win = random_crop_window(stream, config.window_us, seed)
    seq = encode_with(stream, config.encode, win.t_start, win.t_end)
    return augment(seq, config.augment, seed + 1)


def evaluate_split(net: Network, dataset, config: TrainConfig,
                   batch_size: int = 32):
    """Top-1/Top-5 accuracy of the mean-potential readout on a split."""
    from .earlybench import topk_correct  # local import avoids a cycle

    k5 = min(5, net.config.num_classes)
    top1 = top5 = 0
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        seqs = [encode_with(s, config.encode, 0, config.window_us)
                for s, _ in chunk]
        trace = net.forward(batch_frames(seqs), mode="eval")
        scores = trace.readout.mean(axis=0)  # [N, C]
        for row, (_, label) in zip(scores, chunk):
            top1 += topk_correct(row, label, 1)
            top5 += topk_correct(row, label, k5)
    n = max(1, len(dataset))
    return top1 / n, top5 / n


def train(net: Network, train_set, config: TrainConfig, loss_spec: LossSpec,
          test_set=None, log_path=None, verbose: bool = False):
    """Train `net` on (EventStream, label) pairs; returns (net, metrics_log).

    Per epoch: seeded shuffle, random time-crop per sample, augmentation,
    encoding, forward in train mode, loss, BPTT, Adam step with gradient
    clipping, then parameter-constraint projection.
    """
    config.validate()
    if not train_set:
        raise ValueError("training set is empty")
    for _, label in train_set:
        if not (0 <= label < net.config.num_classes):
            raise ValueError(f"label {label} out of range")

    params = net.parameters()
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng(config.rng_seed)
    dropout_rng = np.random.default_rng(config.rng_seed + 1)
    metrics_log = []

    for epoch in range(config.epochs):
        t0 = time.monotonic()
        lr = cosine_lr(epoch, config)
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idxs = order[start : start + config.batch_size]
            seqs, labels = [], []
            for idx in idxs:
                stream, label = train_set[int(idx)]
                seqs.append(prepare_sample(stream, config, epoch, int(idx)))
                labels.append(label)
            frames = batch_frames(seqs)
            trace = net.forward(frames, mode="train", rng=dropout_rng)
            loss = compute_loss(loss_spec, trace.v_history, np.array(labels))
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(
                    f"non-finite loss {loss_val} at epoch {epoch}")
            net.zero_grad()
            ad.backward(loss)
            clip_grad_norm(params, config.grad_clip)
            opt.step(lr)
            net.project()
            epoch_loss += loss_val
            n_batches += 1

        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(1, n_batches),
            "eval_top1": float("nan"),
            "eval_top5": float("nan"),
            "wall_seconds": time.monotonic() - t0,
        }
        if test_set:
            row["eval_top1"], row["eval_top5"] = evaluate_split(
                net, test_set, config)
        row["wall_seconds"] = time.monotonic() - t0
        metrics_log.append(row)
        if verbose:
            print(f"epoch {epoch}: loss={row['train_loss']:.4f} "
                  f"top1={row['eval_top1']:.3f} "
                  f"({row['wall_seconds']:.1f}s)")

    if log_path is not None:
        write_metrics_csv(metrics_log, log_path)
    return net, metrics_log


def write_metrics_csv(metrics_log, path) -> None:
    fields = ["epoch", "train_loss", "eval_top1", "eval_top5", "wall_seconds"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in metrics_log:
            writer.writerow({k: row[k] for k in fields})
