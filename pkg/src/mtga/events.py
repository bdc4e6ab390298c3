"""Event stream containers, the EVS1/CSV codecs and a synthetic generator.

Streams are stored column-wise in numpy arrays so that million-event
recordings stay cheap to bin and voxelize.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

EVS_MAGIC = b"EVS1"
EVS_VERSION = 1
# 4 pad bytes keep the u64 count 8-byte aligned (24-byte header)
EVS_HEADER = struct.Struct("<4sHHHH4xQ")
EVS_RECORD = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1")]
)
CSV_HEADER = "t_us,x,y,p"

assert EVS_HEADER.size == 24 and EVS_RECORD.itemsize == 14


class EventFormatError(ValueError):
    """Raised when a file does not match the declared event format."""


class EventValidationError(ValueError):
    """Raised when an event violates the stream invariants."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index


class ParameterError(ValueError):
    pass


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise EventValidationError(
                f"sensor geometry must be at least 1x1, got {self.width}x{self.height}"
            )
        if self.width > 0xFFFF or self.height > 0xFFFF:
            raise EventValidationError("sensor geometry exceeds 16-bit range")


@dataclass(frozen=True, eq=False)
class EventStream:
    """Immutable, time-sorted event stream.

    Columns are read-only numpy arrays: ``t`` (int64 microseconds), ``x`` and
    ``y`` (int64 pixel indices) and ``p`` (int8, -1 or +1).
    """

    geometry: SensorGeometry
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        cols = {
            "t": np.asarray(self.t, dtype=np.int64).reshape(-1),
            "x": np.asarray(self.x, dtype=np.int64).reshape(-1),
            "y": np.asarray(self.y, dtype=np.int64).reshape(-1),
            "p": np.asarray(self.p, dtype=np.int8).reshape(-1),
        }
        n = len(cols["t"])
        if any(len(c) != n for c in cols.values()):
            raise EventValidationError("event columns have different lengths")
        _validate(cols, self.geometry)
        if n and np.any(np.diff(cols["t"]) < 0):
            order = np.argsort(cols["t"], kind="stable")
            cols = {k: v[order] for k, v in cols.items()}
        for name, col in cols.items():
            col = np.ascontiguousarray(col)
            col.flags.writeable = False
            object.__setattr__(self, name, col)

    @classmethod
    def from_events(cls, events, geometry: SensorGeometry) -> "EventStream":
        events = list(events)
        if not events:
            return cls.empty(geometry)
        t, x, y, p = (list(col) for col in zip(*events))
        return cls(geometry, t, x, y, p)

    @classmethod
    def empty(cls, geometry: SensorGeometry) -> "EventStream":
        return cls(geometry, [], [], [], [])

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for row in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(*row)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None

    def shifted(self, dt: int) -> "EventStream":
        return EventStream(self.geometry, self.t + dt, self.x, self.y, self.p)

    def merged(self, other: "EventStream") -> "EventStream":
        if other.geometry != self.geometry:
            raise EventValidationError("cannot merge streams with different geometry")
        return EventStream(
            self.geometry,
            np.concatenate([self.t, other.t]),
            np.concatenate([self.x, other.x]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.p, other.p]),
        )


def _validate(cols: dict, geometry: SensorGeometry) -> None:
    if len(cols["t"]) == 0:
        return
    checks = [
        (cols["t"] < 0, "timestamp must be non-negative"),
        ((cols["p"] != 1) & (cols["p"] != -1), "polarity must be -1 or +1"),
        ((cols["x"] < 0) | (cols["x"] >= geometry.width),
         f"x out of range for width {geometry.width}"),
        ((cols["y"] < 0) | (cols["y"] >= geometry.height),
         f"y out of range for height {geometry.height}"),
    ]
    for bad, message in checks:
        if bad.any():
            raise EventValidationError(message, int(np.argmax(bad)))


# --------------------------------------------------------------------------
# codecs

def read_stream(path, format: str = "binary", geometry: SensorGeometry | None = None) -> EventStream:
    """Read an event file.

    CSV files carry no geometry, so ``geometry`` is required for them.
    """
    path = Path(path)
    if format == "binary":
        return _read_binary(path.read_bytes())
    if format == "csv":
        if geometry is None:
            raise EventFormatError("csv event files need an explicit sensor geometry")
        return _read_csv(path, geometry)
    raise EventFormatError(f"unknown event format {format!r}")


def _read_binary(buf: bytes) -> EventStream:
    if len(buf) < EVS_HEADER.size:
        raise EventFormatError("file shorter than the EVS1 header")
    magic, version, width, height, reserved, count = EVS_HEADER.unpack_from(buf)
    if magic != EVS_MAGIC:
        raise EventFormatError(f"bad magic {magic!r}, expected {EVS_MAGIC!r}")
    if version != EVS_VERSION:
        raise EventFormatError(f"unsupported EVS version {version}")
    if reserved != 0:
        raise EventFormatError("reserved header field must be 0")
    expected = EVS_HEADER.size + count * EVS_RECORD.itemsize
    if len(buf) != expected:
        raise EventFormatError(f"expected {expected} bytes for {count} records, got {len(buf)}")
    rec = np.frombuffer(buf, dtype=EVS_RECORD, count=count, offset=EVS_HEADER.size)
    if count and np.any(rec["pad"] != 0):
        raise EventFormatError("record padding byte must be 0")
    if count and np.any(rec["t"] > np.iinfo(np.int64).max):
        raise EventValidationError("timestamp exceeds int64 range")
    return EventStream(SensorGeometry(width, height), rec["t"], rec["x"], rec["y"], rec["p"])


def _read_csv(path: Path, geometry: SensorGeometry) -> EventStream:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise EventFormatError(f"bad csv header {header!r}, expected {CSV_HEADER!r}")
        rows = []
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise EventFormatError(f"record {i}: expected 4 fields, got {len(parts)}")
            try:
                rows.append([int(v) for v in parts])
            except ValueError as exc:
                raise EventFormatError(f"record {i}: {exc}") from None
    if not rows:
        return EventStream.empty(geometry)
    arr = np.array(rows, dtype=np.int64)
    return EventStream(geometry, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def encode_binary(stream: EventStream) -> bytes:
    g = stream.geometry
    rec = np.zeros(len(stream), dtype=EVS_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    header = EVS_HEADER.pack(EVS_MAGIC, EVS_VERSION, g.width, g.height, 0, len(stream))
    return header + rec.tobytes()


def write_stream(stream: EventStream, path, format: str = "binary") -> None:
    path = Path(path)
    if format == "binary":
        data = encode_binary(stream)
    elif format == "csv":
        lines = [CSV_HEADER]
        lines.extend(f"{t},{x},{y},{p}" for t, x, y, p in stream)
        data = ("\n".join(lines) + "\n").encode("utf-8")
    else:
        raise EventFormatError(f"unknown event format {format!r}")
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"failed to write event stream to {path}: {exc}") from exc


# --------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    """Oscillating ellipse ("mouth") plus uniform background noise.

    The ellipse's vertical semi-axis oscillates at
    ``base_freq_hz * (1 + freq_step * class_id)``; contour events carry +1
    while the contour expands and -1 while it contracts.
    """

    class_id: int = 0
    duration_ms: float = 200.0
    geometry: SensorGeometry = SensorGeometry(128, 128)
    pattern_rate: float = 20_000.0  # events / s on the contour
    noise_rate: float = 2_000.0  # events / s uniformly over the sensor
    base_freq_hz: float = 5.0
    freq_step: float = 2.0
    semi_axis_x: float = 0.3  # fraction of width
    semi_axis_y: float = 0.15  # fraction of height
    amplitude: float = 0.6  # relative oscillation of semi_axis_y
    jitter_px: float = 0.7

    @property
    def frequency_hz(self) -> float:
        return self.base_freq_hz * (1.0 + self.freq_step * self.class_id)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> EventStream:
    if spec.duration_ms <= 0:
        raise ParameterError("duration_ms must be positive")
    if spec.pattern_rate < 0 or spec.noise_rate < 0:
        raise ParameterError("event rates must be non-negative")
    g = spec.geometry
    a = spec.semi_axis_x * g.width
    b = spec.semi_axis_y * g.height
    if a <= 0 or b <= 0 or b * (1.0 - abs(spec.amplitude)) <= 0:
        raise ParameterError("pattern ellipse has zero area")

    rng = np.random.default_rng(seed)
    duration_us = int(round(spec.duration_ms * 1000))
    seconds = duration_us / 1e6

    n_pat = int(rng.poisson(spec.pattern_rate * seconds))
    t_pat = rng.integers(0, duration_us, n_pat)
    omega = 2.0 * np.pi * spec.frequency_hz
    phase = omega * t_pat / 1e6
    b_t = b * (1.0 + spec.amplitude * np.sin(phase))
    theta = rng.uniform(0.0, 2.0 * np.pi, n_pat)
    cx, cy = (g.width - 1) / 2.0, (g.height - 1) / 2.0
    px = cx + a * np.cos(theta) + rng.normal(0.0, spec.jitter_px, n_pat)
    py = cy + b_t * np.sin(theta) + rng.normal(0.0, spec.jitter_px, n_pat)
    p_pat = np.where(np.cos(phase) >= 0, 1, -1)

    n_noise = int(rng.poisson(spec.noise_rate * seconds))
    t_noise = rng.integers(0, duration_us, n_noise)
    nx = rng.integers(0, g.width, n_noise)
    ny = rng.integers(0, g.height, n_noise)
    p_noise = rng.choice(np.array([-1, 1]), n_noise)

    x = np.clip(np.rint(px), 0, g.width - 1).astype(np.int64)
    y = np.clip(np.rint(py), 0, g.height - 1).astype(np.int64)
    t = np.concatenate([t_pat, t_noise])
    order = np.argsort(t, kind="stable")
    return EventStream(
        g,
        t[order],
        np.concatenate([x, nx])[order],
        np.concatenate([y, ny])[order],
        np.concatenate([p_pat, p_noise])[order],
    )
