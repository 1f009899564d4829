"""Event-camera and thermal-camera front ends.

Events are binned into signed per-pixel counts over half-open time windows;
raw 16-bit thermal frames are mapped to 8 bits with spatially varying
min/max fields so local contrast survives the rescale.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ContractError

EVENT_MAGIC = b"EVT0"
EVENT_VERSION = 1
EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3")])
assert EVENT_DTYPE.itemsize == 16

LOG_FLOOR = 1e-4


class OverlapWarning(UserWarning):
    """Accumulation windows overlap, so some events count in several frames."""


@dataclass
class EventStream:
    """Events sorted by timestamp (microseconds)."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.uint64)
        self.x = np.asarray(self.x, dtype=np.uint16)
        self.y = np.asarray(self.y, dtype=np.uint16)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ContractError("event field arrays differ in length")
        if n and np.any(np.diff(self.t.astype(np.int64)) < 0):
            raise ContractError("event timestamps must be non-decreasing")
        if n and (self.x.max() >= self.width or self.y.max() >= self.height):
            raise ContractError("event coordinates outside the sensor")
        if n and not np.all(np.abs(self.p) == 1):
            raise ContractError("event polarity must be +1 or -1")

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls, width, height) -> "EventStream":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), width, height)

    def slice_time(self, t0_us: int, t1_us: int) -> "EventStream":
        lo, hi = np.searchsorted(self.t, [t0_us, t1_us], side="left")
        return EventStream(self.t[lo:hi], self.x[lo:hi], self.y[lo:hi], self.p[lo:hi], self.width, self.height)


@dataclass
class EventFrame:
    acc: np.ndarray
    t_start: float
    t_end: float

    def normalized(self, clip: float = 5.0) -> np.ndarray:
        return normalize_event_frame(self, clip)


def seconds_to_us(t) -> np.ndarray:
    return np.round(np.asarray(t, dtype=np.float64) * 1e6).astype(np.int64)


def accumulate_events(stream: EventStream, frame_times, window: float) -> list[EventFrame]:
    """Sum polarities per pixel over ``[t_k, t_k + window)`` for each start ``t_k`` (seconds)."""
    frame_times = np.asarray(frame_times, dtype=np.float64)
    if window <= 0:
        raise ContractError("window must be positive")
    if np.any(np.diff(frame_times) < 0):
        raise ContractError("frame times must be sorted")
    starts = seconds_to_us(frame_times)
    ends = seconds_to_us(frame_times + window)
    if np.any(starts[1:] < ends[:-1]):
        warnings.warn("event accumulation windows overlap", OverlapWarning, stacklevel=2)
    ts = stream.t.astype(np.int64)
    lo = np.searchsorted(ts, starts, side="left")
    hi = np.searchsorted(ts, ends, side="left")
    npx = stream.width * stream.height
    flat = stream.y.astype(np.int64) * stream.width + stream.x
    pos = stream.p > 0
    frames = []
    for k, (a, b) in enumerate(zip(lo, hi)):
        f, s = flat[a:b], pos[a:b]
        acc = (np.bincount(f[s], minlength=npx) - np.bincount(f[~s], minlength=npx)).astype(np.int64)
        frames.append(EventFrame(acc.reshape(stream.height, stream.width), float(frame_times[k]),
                                 float(frame_times[k] + window)))
    return frames


def normalize_event_frame(frame: EventFrame, clip: float = 5.0) -> np.ndarray:
    """Map signed counts to [0, 1] with 0 -> 0.5, replicated to 3 channels."""
    if clip <= 0:
        raise ContractError("clip must be positive")
    acc = frame.acc if isinstance(frame, EventFrame) else np.asarray(frame)
    img = 0.5 + 0.5 * np.clip(acc, -clip, clip) / clip
    return np.repeat(img[..., None], 3, axis=-1)


def synthesize_events(video, threshold: float, timestamps=None) -> EventStream:
    """Contrast-threshold events from a luminance video (F, H, W) in [0, 1].

    Each pixel keeps a reference log-intensity.  Whenever the log-intensity
    moves ``n`` whole thresholds past the reference, ``n`` events are emitted
    with timestamps linearly interpolated inside the frame gap, and the
    reference moves to the last crossed level.  ``timestamps`` are frame
    times in seconds (default: frame index).
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 3 or video.shape[0] < 2:
        raise ContractError("need a (frames, height, width) video with at least 2 frames")
    if threshold <= 0:
        raise ContractError("threshold must be positive")
    F, H, W = video.shape
    times = np.arange(F, dtype=np.float64) if timestamps is None else np.asarray(timestamps, dtype=np.float64)
    logv = np.log(np.maximum(video, LOG_FLOOR)).reshape(F, -1)
    ref = logv[0].copy()
    chunks_t, chunks_pix, chunks_p = [], [], []
    for f in range(1, F):
        prev, cur = logv[f - 1], logv[f]
        diff = cur - ref
        n = np.floor(np.abs(diff) / threshold + 1e-9).astype(np.int64)
        pix = np.nonzero(n)[0]
        if len(pix) == 0:
            continue
        counts = n[pix]
        sign = np.sign(diff[pix])
        rep = np.repeat(np.arange(len(pix)), counts)
        k = np.arange(rep.size) - np.repeat(np.cumsum(counts) - counts, counts) + 1
        level = ref[pix][rep] + k * threshold * sign[rep]
        span = cur[pix][rep] - prev[pix][rep]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(span != 0, (level - prev[pix][rep]) / span, 1.0)
        frac = np.clip(frac, 0.0, 1.0)
        t_ev = seconds_to_us(times[f - 1] + frac * (times[f] - times[f - 1]))
        order = np.argsort(t_ev, kind="stable")
        chunks_t.append(t_ev[order])
        chunks_pix.append(pix[rep][order])
        chunks_p.append(sign[rep][order].astype(np.int8))
        ref[pix] += counts * threshold * sign
    if not chunks_t:
        return EventStream.empty(W, H)
    t = np.concatenate(chunks_t)
    pix = np.concatenate(chunks_pix)
    return EventStream(t, pix % W, pix // W, np.concatenate(chunks_p), W, H)


def write_events(path, stream: EventStream) -> None:
    """Little-endian binary: 16-byte header then 16-byte records."""
    rec = np.zeros(len(stream), dtype=EVENT_DTYPE)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    header = EVENT_MAGIC + struct.pack("<IHHI", EVENT_VERSION, stream.width, stream.height, len(stream))
    with open(path, "wb") as f:
        f.write(header)
        f.write(rec.tobytes())


def read_events(path) -> EventStream:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != EVENT_MAGIC:
        raise ContractError(f"{path}: not an event file")
    version, width, height, count = struct.unpack("<IHHI", data[4:16])
    if version != EVENT_VERSION:
        raise ContractError(f"{path}: unsupported event file version {version}")
    if len(data) != 16 + count * EVENT_DTYPE.itemsize:
        raise ContractError(f"{path}: truncated event file")
    rec = np.frombuffer(data, dtype=EVENT_DTYPE, offset=16, count=count)
    return EventStream(rec["t"], rec["x"], rec["y"], rec["p"], width, height)


# --- thermal ----------------------------------------------------------------

def cell_edges(n: int, g: int) -> np.ndarray:
    """Boundaries of ``g`` near-equal cells over ``n`` pixels."""
    return (np.arange(g + 1) * n) // g


def box_smooth(field: np.ndarray) -> np.ndarray:
    """3x3 mean with edge replication."""
    p = np.pad(field, 1, mode="edge")
    h, w = field.shape
    acc = np.zeros_like(field, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            acc += p[dy:dy + h, dx:dx + w]
    return acc / 9.0


def upsample_bilinear(field: np.ndarray, ycenters, xcenters, height: int, width: int) -> np.ndarray:
    """Separable linear interpolation from cell centers, constant beyond the outer centers."""
    rows = np.stack([np.interp(np.arange(width), xcenters, r) for r in field])
    return np.stack([np.interp(np.arange(height), ycenters, rows[:, j]) for j in range(width)], axis=1)


def thermal_fields(raw, grid: int = 8, rounds: int = 3):
    """Smoothed, upsampled (min_field, max_field) used by :func:`enhance_thermal`."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.size == 0:
        raise ContractError("thermal image must be a non-empty 2-D array")
    H, W = raw.shape
    gy, gx = min(grid, H), min(grid, W)
    ye, xe = cell_edges(H, gy), cell_edges(W, gx)
    lo = np.empty((gy, gx))
    hi = np.empty((gy, gx))
    for i in range(gy):
        for j in range(gx):
            cell = raw[ye[i]:ye[i + 1], xe[j]:xe[j + 1]]
            lo[i, j], hi[i, j] = cell.min(), cell.max()
    for _ in range(rounds):
        lo, hi = box_smooth(lo), box_smooth(hi)
    hi = np.maximum(hi, lo + 1.0)
    yc = (ye[:-1] + ye[1:] - 1) / 2.0
    xc = (xe[:-1] + xe[1:] - 1) / 2.0
    return upsample_bilinear(lo, yc, xc, H, W), upsample_bilinear(hi, yc, xc, H, W)


def enhance_thermal(raw, grid: int = 8, rounds: int = 3) -> np.ndarray:
    """Rescale raw radiometric counts to 8 bits using local min/max fields.

    ``grid=1, rounds=0`` reduces to global min-max rescaling.  An image with
    no dynamic range at all maps to mid-gray 128.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ContractError("thermal image is empty")
    if raw.max() == raw.min():
        return np.full(raw.shape, 128, dtype=np.uint8)
    lo, hi = thermal_fields(raw, grid, rounds)
    scaled = 255.0 * (raw - lo) / (hi - lo)
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def thermal_to_unit(enhanced) -> np.ndarray:
    """8-bit enhanced thermal as a 3-channel [0, 1] image."""
    img = np.asarray(enhanced, dtype=np.float64) / 255.0
    return np.repeat(img[..., None], 3, axis=-1)


def write_thermal_raw(path, counts) -> None:
    arr = np.asarray(counts)
    if arr.min() < 0 or arr.max() > 65535:
        raise ContractError("thermal counts must fit in 16 bits")
    Image.fromarray(arr.astype(np.uint16)).save(path, format="PNG")


def read_thermal_raw(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im).astype(np.uint16)
