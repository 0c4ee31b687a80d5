"""Event data model, binary file format, and synthetic stream generation.

File format (little-endian):
    header (16 bytes): magic b"EEVA" | version u16 = 1 | sensor_width u16 |
                       sensor_height u16 | event_count u32 | reserved u16
    records (13 bytes each): t u64 (microseconds) | x u16 | y u16 | p u8
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"EEVA"
FORMAT_VERSION = 1
HEADER_STRUCT = struct.Struct("<4sHHHIH")
RECORD_STRUCT = struct.Struct("<QHHB")

US_PER_S = 1_000_000

PATTERNS = ("bar_left", "bar_right", "dot_cw", "dot_ccw", "noise")


class StreamFormatError(ValueError):
    """File does not start with the expected magic header / version."""


class StreamCorruptionError(ValueError):
    """File is truncated or internally inconsistent."""


class StreamValidationError(ValueError):
    """Stream content violates its own declared geometry or ordering."""


@dataclass(frozen=True)
class Event:
    t: int  # microseconds
    x: int
    y: int
    p: int  # polarity, 0 or 1


@dataclass
class EventStream:
    """Time-sorted stream of camera events with sensor geometry.

    Events are stored as a structured-free set of parallel numpy arrays for
    speed; `events` materializes `Event` objects on demand.
    """

    sensor_width: int
    sensor_height: int
    t: np.ndarray  # uint64, microseconds, non-decreasing
    x: np.ndarray  # uint16
    y: np.ndarray  # uint16
    p: np.ndarray  # uint8, in {0, 1}
    duration_us: int
    label: int | None = None
    sorted_on_read: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.uint64)
        self.x = np.asarray(self.x, dtype=np.uint16)
        self.y = np.asarray(self.y, dtype=np.uint16)
        self.p = np.asarray(self.p, dtype=np.uint8)

    @property
    def event_count(self) -> int:
        return len(self.t)

    @property
    def events(self) -> list[Event]:
        return [
            Event(int(t), int(x), int(y), int(p))
            for t, x, y, p in zip(self.t, self.x, self.y, self.p)
        ]

    def validate(self) -> None:
        n = self.event_count
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise StreamValidationError("parallel arrays have mismatched lengths")
        if n == 0:
            return
        if np.any(np.diff(self.t.astype(np.int64)) < 0):
            raise StreamValidationError("events not sorted by timestamp")
        if int(self.t[-1]) > self.duration_us:
            raise StreamValidationError("last event exceeds declared duration")
        if np.any(self.x >= self.sensor_width) or np.any(self.y >= self.sensor_height):
            raise StreamValidationError("event coordinates outside sensor geometry")
        if np.any(self.p > 1):
            raise StreamValidationError("polarity must be 0 or 1")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.sensor_width == other.sensor_width
            and self.sensor_height == other.sensor_height
            and self.duration_us == other.duration_us
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )


def from_events(
    events: list[Event],
    sensor_width: int,
    sensor_height: int,
    duration_us: int | None = None,
    label: int | None = None,
) -> EventStream:
    """Build a stream from `Event` objects; duration defaults to the last timestamp."""
    t = np.array([e.t for e in events], dtype=np.uint64)
    x = np.array([e.x for e in events], dtype=np.uint16)
    y = np.array([e.y for e in events], dtype=np.uint16)
    p = np.array([e.p for e in events], dtype=np.uint8)
    if duration_us is None:
        duration_us = int(t[-1]) if len(t) else 0
    stream = EventStream(sensor_width, sensor_height, t, x, y, p, duration_us, label)
    stream.validate()
    return stream


def write_stream(stream: EventStream, path) -> None:
    stream.validate()
    header = HEADER_STRUCT.pack(
        MAGIC,
        FORMAT_VERSION,
        stream.sensor_width,
        stream.sensor_height,
        stream.event_count,
        0,
    )
    # Vectorized record packing: build a structured array with the exact
    # little-endian layout and dump its bytes.
    rec = np.zeros(
        stream.event_count,
        dtype=np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")]),
    )
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def read_stream(path) -> EventStream:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_STRUCT.size:
        raise StreamFormatError(f"{path}: file shorter than header")
    magic, version, width, height, count, _ = HEADER_STRUCT.unpack_from(raw, 0)
    if magic != MAGIC:
        raise StreamFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise StreamFormatError(f"{path}: unsupported version {version}")
    body = raw[HEADER_STRUCT.size :]
    expected = count * RECORD_STRUCT.size
    if len(body) != expected:
        raise StreamCorruptionError(
            f"{path}: expected {expected} record bytes, found {len(body)}"
        )
    rec = np.frombuffer(
        body,
        dtype=np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")]),
    )
    t = rec["t"].copy()
    x = rec["x"].copy()
    y = rec["y"].copy()
    p = rec["p"].copy()
    if np.any(x >= width) or np.any(y >= height):
        raise StreamValidationError(f"{path}: event coordinates outside geometry")
    if np.any(p > 1):
        raise StreamValidationError(f"{path}: polarity outside {{0, 1}}")
    sorted_on_read = False
    if len(t) and np.any(np.diff(t.astype(np.int64)) < 0):
        order = np.argsort(t, kind="stable")
        t, x, y, p = t[order], x[order], y[order], p[order]
        sorted_on_read = True
        warnings.warn(f"{path}: events were not time-sorted; re-sorted on read")
    duration = int(t[-1]) if len(t) else 0
    stream = EventStream(width, height, t, x, y, p, duration, None, sorted_on_read)
    stream.validate()
    return stream


def generate_synthetic(
    pattern: str,
    geometry: tuple[int, int],
    duration_us: int,
    rate: float,
    seed: int,
) -> EventStream:
    """Deterministic synthetic event stream for one of the builtin motion patterns.

    Event times are Poisson-like (Poisson count, uniform placement); spatial
    positions follow a moving pattern so the class is recoverable from motion
    direction. `bar_left` and `bar_right` are exact mirror images under
    horizontal flip for the same seed: all random draws are made before the
    pattern-specific position mapping is applied.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
    if duration_us <= 0:
        raise ValueError("duration_us must be positive")
    if rate <= 0:
        raise ValueError("rate must be positive")
    w, h = geometry
    rng = np.random.default_rng(seed)

    n = int(rng.poisson(rate * duration_us / US_PER_S))
    t = np.sort(rng.integers(0, duration_us, size=n, dtype=np.int64))
    p = rng.integers(0, 2, size=n, dtype=np.int64)
    # Pattern-independent jitter draws keep bar_left/bar_right mirror-exact.
    jitter_a = rng.random(n)
    jitter_b = rng.random(n)
    phase = t / duration_us  # in [0, 1)

    if pattern in ("bar_left", "bar_right"):
        # Vertical bar sweeping across the frame once, 3 px wide.
        bar_w = max(1, w // 10)
        x_base = np.floor(phase * (w - bar_w)).astype(np.int64)
        x = x_base + np.floor(jitter_a * bar_w).astype(np.int64)
        y = np.floor(jitter_b * h).astype(np.int64)
        if pattern == "bar_left":
            x = (w - 1) - x
    elif pattern in ("dot_cw", "dot_ccw"):
        # Dot circling the frame center once per recording.
        radius = min(w, h) * 0.35
        direction = 1.0 if pattern == "dot_cw" else -1.0
        angle = direction * 2.0 * np.pi * phase
        spread = max(1, min(w, h) // 12)
        cx = w / 2.0 + radius * np.cos(angle)
        cy = h / 2.0 + radius * np.sin(angle)
        x = np.floor(cx + (jitter_a - 0.5) * 2 * spread).astype(np.int64)
        y = np.floor(cy + (jitter_b - 0.5) * 2 * spread).astype(np.int64)
    else:  # noise
        x = np.floor(jitter_a * w).astype(np.int64)
        y = np.floor(jitter_b * h).astype(np.int64)

    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    stream = EventStream(
        w,
        h,
        t.astype(np.uint64),
        x.astype(np.uint16),
        y.astype(np.uint16),
        p.astype(np.uint8),
        duration_us,
    )
    stream.validate()
    return stream
