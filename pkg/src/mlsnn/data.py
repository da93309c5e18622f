"""Dataset sources: the synthetic oriented-bar task, tensor directories and event CSVs."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import DTYPE
from .coding import events_to_frames, read_events_csv
from .errors import ConfigError, DataError
from .training import Dataset

BAR_CLASSES = ("horizontal", "vertical", "diagonal", "anti_diagonal")


def _bar(kind: int, size: int, offset: int, width: int) -> np.ndarray:
    r, c = np.indices((size, size))
    if kind == 0:
        d = r - offset
    elif kind == 1:
        d = c - offset
    elif kind == 2:
        d = r - c - (offset - size // 2)
    else:
        d = r + c - (size - 1) - (offset - size // 2)
    return ((d >= 0) & (d < width)).astype(DTYPE)


def synthetic_bars(n: int, seed: int = 0, size: int = 8, noise: float = 0.2) -> Dataset:
    """Seeded 4-class dataset of oriented bars on a size x size grid, one channel.

    Classes are horizontal, vertical, diagonal and anti-diagonal bars with a
    random position, width 1-2 and intensity in [0.6, 1], plus uniform noise.
    """
    if n < 0 or size < 4:
        raise ConfigError("synthetic dataset needs n >= 0 and size >= 4")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, len(BAR_CLASSES), size=n)
    images = np.zeros((n, 1, size, size), dtype=DTYPE)
    for i, k in enumerate(labels):
        offset = int(rng.integers(1, size - 2))
        width = int(rng.integers(1, 3))
        level = rng.uniform(0.6, 1.0)
        img = level * _bar(int(k), size, offset, width) + noise * rng.random((size, size))
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, num_classes=len(BAR_CLASSES))


def synthetic_split(n_train: int, n_val: int, seed: int = 0, **kw) -> tuple[Dataset, Dataset]:
    full = synthetic_bars(n_train + n_val, seed, **kw)
    return full.subset(np.arange(n_train)), full.subset(np.arange(n_train, n_train + n_val))


def _read_labels(directory: Path) -> list[tuple[str, int]]:
    path = directory / "labels.csv"
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"file", "label"} <= set(reader.fieldnames):
                raise DataError(f"{path}: expected columns 'file,label'")
            rows = [(r["file"], int(r["label"])) for r in reader]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except ValueError:
        raise DataError(f"{path}: labels must be integers") from None
    if not rows:
        raise DataError(f"{path}: no samples listed")
    return rows


def load_tensor_dir(directory) -> Dataset:
    """Images stored as one tensor file per sample plus labels.csv (file,label)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    rows = _read_labels(directory)
    arrays = [ag.load_tensor(directory / name) for name, _ in rows]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DataError(f"{directory}: samples have differing shapes {sorted(shapes)}")
    return Dataset(np.stack(arrays), np.array([lab for _, lab in rows]))


def save_tensor_dir(directory, dataset: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "label"])
        for i, (x, y) in enumerate(zip(dataset.inputs, dataset.labels)):
            name = f"sample_{i:05d}.mltn"
            ag.save_tensor(directory / name, x)
            w.writerow([name, int(y)])


def load_events_dir(directory, T: int, sensor_width: int, sensor_height: int,
                    slicing: str = "by_count", normalize: bool = False) -> Dataset:
    """Event CSVs (t,x,y,p) listed in labels.csv, integrated into T frames each."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    rows = _read_labels(directory)
    frames = []
    for name, _ in rows:
        stream = read_events_csv(directory / name, sensor_width, sensor_height)
        frames.append(events_to_frames(stream, T, slicing, normalize=normalize).astype(DTYPE))
    return Dataset(np.stack(frames), np.array([lab for _, lab in rows]), temporal=True)


def load_dataset(spec: dict, T: int) -> tuple[Dataset, Dataset]:
    """Build (train, val) from a dataset spec of format synthetic, tensors or events."""
    fmt = spec.get("format", "synthetic")
    if fmt == "synthetic":
        return synthetic_split(spec.get("train_size", 256), spec.get("val_size", 128),
                               spec.get("seed", 0), size=spec.get("size", 8), noise=spec.get("noise", 0.2))

    def split(path_key):
        path = spec.get(path_key)
        if path is None:
            return None
        if fmt == "tensors":
            return load_tensor_dir(path)
        if fmt == "events":
            return load_events_dir(path, T, spec["sensor_width"], spec["sensor_height"],
                                   spec.get("slicing", "by_count"), spec.get("normalize", False))
        raise ConfigError(f"unknown dataset format {fmt!r}")

    if "path" not in spec:
        raise ConfigError(f"dataset format {fmt!r} needs a 'path'")
    if fmt == "events" and not {"sensor_width", "sensor_height"} <= set(spec):
        raise ConfigError("events datasets need sensor_width and sensor_height")
    train = split("path")
    val = split("val_path")
    return train, val if val is not None else train
