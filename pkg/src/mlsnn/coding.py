"""Input encoding, rate decoding and event-camera ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import DTYPE, Tensor
from .errors import ConfigError, DataError

SLICINGS = ("by_count", "by_time")


def direct_encode(image, T: int) -> np.ndarray:
    """Present the image as a constant input current at each of T timesteps."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    image = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=DTYPE)
    return np.broadcast_to(image, (T,) + image.shape).copy()


def rate_decode(spikes, N: int, T: int) -> np.ndarray:
    """(1 / (N*T)) * sum over time of z(t). Accepts a SpikeTensor, Tensor or array."""
    if N < 1 or T < 1:
        raise ConfigError("rate_decode needs N >= 1 and T >= 1")
    values = getattr(spikes, "data", spikes)
    values = getattr(values, "data", values)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != T:
        raise ConfigError(f"spike train has {values.shape[0]} timesteps, expected {T}")
    return values.sum(axis=0) / (N * T)


@dataclass
class EventStream:
    """DVS events as parallel arrays, timestamps in microseconds."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    sensor_width: int
    sensor_height: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise DataError("event field arrays differ in length")
        if n == 0:
            return
        if self.t.min() < 0 or np.any(np.diff(self.t) < 0):
            raise DataError("event timestamps must be non-negative and non-decreasing")
        if self.x.min() < 0 or self.x.max() >= self.sensor_width:
            raise DataError("event x coordinate outside the sensor")
        if self.y.min() < 0 or self.y.max() >= self.sensor_height:
            raise DataError("event y coordinate outside the sensor")
        if not np.isin(self.p, (0, 1)).all():
            raise DataError("event polarity must be 0 or 1")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls, sensor_width: int, sensor_height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, sensor_width, sensor_height)


def slice_indices(stream: EventStream, T: int, slicing: str = "by_count") -> np.ndarray:
    """Temporal slice index in [0, T) for each event."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if slicing not in SLICINGS:
        raise ConfigError(f"slicing must be one of {SLICINGS}, got {slicing!r}")
    m = len(stream)
    if slicing == "by_count":
        if m == 0:
            raise DataError("by_count slicing needs a non-empty event stream")
        starts = (np.arange(T, dtype=np.int64) * m) // T
        return np.searchsorted(starts, np.arange(m), side="right") - 1
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    t0, t1 = int(stream.t[0]), int(stream.t[-1])
    if t1 == t0:
        return np.zeros(m, dtype=np.int64)
    return np.minimum((stream.t - t0) * T // (t1 - t0), T - 1)


def events_to_frames(stream: EventStream, T: int, slicing: str = "by_count", normalize: bool = False) -> np.ndarray:
    """Integrate events into T frames of shape (2, H, W), one channel per polarity."""
    idx = slice_indices(stream, T, slicing)
    frames = np.zeros((T, 2, stream.sensor_height, stream.sensor_width), dtype=np.int64)
    np.add.at(frames, (idx, stream.p, stream.y, stream.x), 1)
    if not normalize:
        return frames
    peak = frames.reshape(T, -1).max(axis=1).astype(DTYPE)
    peak[peak == 0] = 1
    return frames.astype(DTYPE) / peak[:, None, None, None]


def read_events_csv(path, sensor_width: int, sensor_height: int) -> EventStream:
    """Read events from a CSV with header ``t,x,y,p``."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["t", "x", "y", "p"]:
                raise DataError(f"{path}: expected header 't,x,y,p'")
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DataError(f"cannot read events file {path}: {exc}") from None
    try:
        arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    except ValueError:
        raise DataError(f"{path}: non-integer event field") from None
    return EventStream(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], sensor_width, sensor_height)


def write_events_csv(path, stream: EventStream) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "p"])
        for row in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()):
            w.writerow(row)
