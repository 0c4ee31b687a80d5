"""Event-stream encoding into dense per-polarity count frames, plus augmentation.

Encoding: center-crop to a square window, block-sum downsample to the target
resolution, and bin events over constant time windows per polarity. The bin
duration doubles as the output update period of the network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .events import EventStream

DEFAULT_BIN_US = 2000  # 2 ms bins


@dataclass
class FrameSequence:
    """Dense [T, 2, H, W] tensor of per-polarity event counts."""

    data: np.ndarray  # non-negative integer counts, shape [T, 2, H, W]
    bin_us: int
    origin_us: int

    @property
    def num_bins(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


class CropWindow(NamedTuple):
    t_start: int
    t_end: int
    padded: bool


@dataclass
class AugmentSpec:
    """Ranges for train-time augmentation; zero ranges mean identity."""

    shift_px: tuple[int, int] = (-10, 10)
    zoom: tuple[float, float] = (0.9, 1.1)
    hflip_prob: float = 0.5

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(shift_px=(0, 0), zoom=(1.0, 1.0), hflip_prob=0.0)


def encode(
    stream: EventStream,
    crop: tuple[int, int, int],
    out_size: tuple[int, int],
    bin_us: int = DEFAULT_BIN_US,
    t_start_us: int = 0,
    t_end_us: int | None = None,
) -> FrameSequence:
    """Bin events into [T, 2, H, W] count frames.

    `crop` is (cx, cy, side): a side x side window centered at (cx, cy).
    Events outside the crop window or time range are dropped; inside, each
    event increments its (bin, polarity, row-block, col-block) cell.
    """
    cx, cy, side = crop
    h, w = out_size
    if side % h != 0 or side % w != 0:
        raise ValueError(f"crop side {side} not divisible by output size {out_size}")
    if t_end_us is None:
        t_end_us = stream.duration_us
    if t_end_us <= t_start_us:
        raise ValueError("t_end_us must exceed t_start_us")
    if bin_us <= 0:
        raise ValueError("bin_us must be positive")

    block_h = side // h
    block_w = side // w
    x0 = cx - side // 2
    y0 = cy - side // 2
    num_bins = -(-(t_end_us - t_start_us) // bin_us)  # ceil

    t = stream.t.astype(np.int64)
    x = stream.x.astype(np.int64)
    y = stream.y.astype(np.int64)
    p = stream.p.astype(np.int64)

    keep = (
        (t >= t_start_us)
        & (t < t_end_us)
        & (x >= x0)
        & (x < x0 + side)
        & (y >= y0)
        & (y < y0 + side)
    )
    t, x, y, p = t[keep], x[keep], y[keep], p[keep]

    bins = (t - t_start_us) // bin_us
    rows = (y - y0) // block_h
    cols = (x - x0) // block_w
    flat = ((bins * 2 + p) * h + rows) * w + cols
    counts = np.bincount(flat, minlength=num_bins * 2 * h * w)
    data = counts.reshape(num_bins, 2, h, w).astype(np.int32)
    return FrameSequence(data=data, bin_us=bin_us, origin_us=t_start_us)


def random_crop_window(
    stream: EventStream, window_us: int, rng_seed: int
) -> CropWindow:
    """Uniformly random time window of fixed length; deterministic per seed.

    Streams shorter than the window get (0, window_us) with the padded flag
    set; encoding such a window zero-pads the trailing bins.
    """
    duration = stream.duration_us
    if duration < window_us:
        return CropWindow(0, window_us, True)
    rng = np.random.default_rng(rng_seed)
    start = int(rng.integers(0, duration - window_us + 1))
    return CropWindow(start, start + window_us, False)


def _shift(data: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate all bins by (dx, dy) cells with zero padding."""
    if dx == 0 and dy == 0:
        return data
    t, c, h, w = data.shape
    out = np.zeros_like(data)
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[:, :, ys, xs] = data[:, :, ys_src, xs_src]
    return out


def _zoom(data: np.ndarray, factor: float) -> np.ndarray:
    """Nearest-neighbor rescale about the frame center."""
    if factor == 1.0:
        return data
    t, c, h, w = data.shape
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    rows = np.round(cy + (np.arange(h) - cy) / factor).astype(np.int64)
    cols = np.round(cx + (np.arange(w) - cx) / factor).astype(np.int64)
    valid_r = np.flatnonzero((rows >= 0) & (rows < h))
    valid_c = np.flatnonzero((cols >= 0) & (cols < w))
    out = np.zeros_like(data)
    out[:, :, valid_r[:, None], valid_c[None, :]] = data[
        :, :, rows[valid_r][:, None], cols[valid_c][None, :]
    ]
    return out


def augment(seq: FrameSequence, spec: AugmentSpec, rng_seed: int) -> FrameSequence:
    """Random shift / zoom / horizontal flip applied identically to every bin."""
    lo, hi = spec.zoom
    if lo <= 0 or hi <= 0:
        raise ValueError("zoom factors must be positive")
    rng = np.random.default_rng(rng_seed)
    dx = int(rng.integers(spec.shift_px[0], spec.shift_px[1] + 1))
    dy = int(rng.integers(spec.shift_px[0], spec.shift_px[1] + 1))
    factor = float(rng.uniform(lo, hi))
    flip = bool(rng.random() < spec.hflip_prob)

    data = seq.data
    data = _zoom(data, factor)
    data = _shift(data, dx, dy)
    if flip:
        data = data[:, :, :, ::-1].copy()
    return FrameSequence(data=data, bin_us=seq.bin_us, origin_us=seq.origin_us)


@dataclass
class EncodeSettings:
    """Bundle of encode arguments shared by training and evaluation."""

    crop_side: int
    out_hw: int
    bin_us: int = DEFAULT_BIN_US
    crop_center: tuple[int, int] | None = None  # defaults to the sensor center

    def crop_for(self, stream: EventStream) -> tuple[int, int, int]:
        if self.crop_center is not None:
            cx, cy = self.crop_center
        else:
            cx, cy = stream.sensor_width // 2, stream.sensor_height // 2
        return (cx, cy, self.crop_side)


def encode_with(
    stream: EventStream,
    settings: EncodeSettings,
    t_start_us: int = 0,
    t_end_us: int | None = None,
) -> FrameSequence:
    return encode(
        stream,
        settings.crop_for(stream),
        (settings.out_hw, settings.out_hw),
        settings.bin_us,
        t_start_us,
        t_end_us,
    )


def hflip(seq: FrameSequence) -> FrameSequence:
    """Deterministic horizontal flip (used by tests and ablations)."""
    return FrameSequence(
        data=seq.data[:, :, :, ::-1].copy(), bin_us=seq.bin_us, origin_us=seq.origin_us
    )
