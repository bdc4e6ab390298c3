"""Temporal bilinear binning of an event stream into signed event frames."""
from __future__ import annotations

import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import EventStream, SensorGeometry

EFR_MAGIC = b"EFR1"
EFR_VERSION = 1
EFR_HEADER = struct.Struct("<4sHHHH")
CHUNK_EVENTS = 1 << 18


class FrameFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FrameConfig:
    geometry: SensorGeometry
    bins: int = 60
    split_polarity: bool = False

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")

    @property
    def channels(self) -> int:
        return 2 if self.split_polarity else 1


@dataclass(frozen=True, eq=False)
class EventFrameTensor:
    """``data`` has shape (T, H, W), or (T, 2, H, W) with split polarity."""

    data: np.ndarray
    t_start: int = 0
    t_end: int = 0

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return self.data.shape


def normalized_time(t: np.ndarray, bins: int) -> np.ndarray:
    """Map timestamps onto [0, bins-1]; a single-timestamp stream maps to 0."""
    if len(t) == 0:
        return np.zeros(0)
    t0, t1 = int(t[0]), int(t[-1])
    if t1 == t0:
        return np.zeros(len(t))
    return (bins - 1) * ((t - t0).astype(np.float64) / float(t1 - t0))


def _accumulate(flat_size, lo, w_lo, hi, w_hi) -> np.ndarray:
    # np.add.at on a lazily zeroed buffer only touches the pages it writes,
    # which keeps the fixed cost low when events are few relative to T*H*W
    acc = np.zeros(flat_size)
    np.add.at(acc, lo, w_lo)
    np.add.at(acc, hi, w_hi)
    return acc


def build_frames(stream: EventStream, cfg: FrameConfig, threads: int = 1) -> EventFrameTensor:
    g = cfg.geometry
    T, H, W = cfg.bins, g.height, g.width
    C = cfg.channels
    shape = (T, C, H, W) if cfg.split_polarity else (T, H, W)
    n = len(stream)
    if n == 0:
        return EventFrameTensor(np.zeros(shape, dtype=np.float32))

    ts = normalized_time(stream.t, T)
    b0 = np.minimum(np.floor(ts).astype(np.int64), T - 1)
    frac = ts - b0
    b1 = np.minimum(b0 + 1, T - 1)
    p = stream.p.astype(np.float64)
    if cfg.split_polarity:
        ch = (stream.p < 0).astype(np.int64)
        pix = (ch * H + stream.y) * W + stream.x
        p = np.abs(p)
    else:
        pix = stream.y * W + stream.x
    plane = C * H * W
    lo = b0 * plane + pix
    hi = b1 * plane + pix
    w_lo = p * (1.0 - frac)
    w_hi = p * frac
    size = T * plane

    # Chunk boundaries depend only on n and partials are reduced in chunk
    # order, so the result is bit-identical for any worker count.
    starts = range(0, n, CHUNK_EVENTS)
    parts = [slice(a, min(a + CHUNK_EVENTS, n)) for a in starts]
    work = lambda s: _accumulate(size, lo[s], w_lo[s], hi[s], w_hi[s])  # noqa: E731
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(work, parts))
    else:
        partials = [work(s) for s in parts]
    acc = partials[0]
    for part in partials[1:]:
        acc += part
    data = acc.reshape(shape).astype(np.float32)
    return EventFrameTensor(data, int(stream.t[0]), int(stream.t[-1]))


# --------------------------------------------------------------------------
# EFR1 file format

def write_frames(frames: EventFrameTensor, path) -> None:
    data = frames.data
    if data.ndim != 3:
        raise FrameFormatError("EFR1 stores single-channel T x H x W frames only")
    T, H, W = data.shape
    header = EFR_HEADER.pack(EFR_MAGIC, EFR_VERSION, T, H, W)
    Path(path).write_bytes(header + np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_frames(path) -> EventFrameTensor:
    buf = Path(path).read_bytes()
    if len(buf) < EFR_HEADER.size:
        raise FrameFormatError("file shorter than the EFR1 header")
    magic, version, T, H, W = EFR_HEADER.unpack_from(buf)
    if magic != EFR_MAGIC:
        raise FrameFormatError(f"bad magic {magic!r}, expected {EFR_MAGIC!r}")
    if version != EFR_VERSION:
        raise FrameFormatError(f"unsupported EFR version {version}")
    expected = EFR_HEADER.size + 4 * T * H * W
    if len(buf) != expected:
        raise FrameFormatError(f"expected {expected} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=EFR_HEADER.size).reshape(T, H, W)
    return EventFrameTensor(data.astype(np.float32))


# --------------------------------------------------------------------------
# rendering

def to_gray(frame: np.ndarray) -> np.ndarray:
    """Min-max normalize a signed frame to uint8; a constant frame maps to 128."""
    frame = np.asarray(frame, dtype=np.float64)
    lo, hi = frame.min(), frame.max()
    if hi == lo:
        return np.full(frame.shape, 128, dtype=np.uint8)
    return np.floor((frame - lo) * 255.0 / (hi - lo) + 0.5).astype(np.uint8)


def render_frame(frames: EventFrameTensor, index: int) -> np.ndarray:
    if not 0 <= index < frames.bins:
        raise IndexError(f"bin {index} out of range for {frames.bins} frames")
    frame = frames.data[index]
    if frame.ndim == 3:
        frame = frame[0] - frame[1]
    return to_gray(frame)


def write_pgm(image: np.ndarray, path) -> None:
    H, W = image.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + image.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if m is None:
        raise FrameFormatError("not a binary PGM file")
    W, H, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise FrameFormatError("only 8-bit PGM files are supported")
    return np.frombuffer(buf, dtype=np.uint8, count=W * H, offset=m.end()).reshape(H, W)
