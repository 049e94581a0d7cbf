"""Datasets: loading, normalisation, splits, augmentation and a synthetic task."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError, UsageError
from .tensor_core import load_ltt, save_ltt


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    label: int


class Dataset:
    """Images ``(n, H, W, C)`` in [0, 1] with integer labels."""

    def __init__(self, images, labels, class_count: int | None = None):
        images = np.asarray(images, dtype=np.float64)
        labels = np.asarray(labels)
        if images.ndim != 4:
            raise DataError(f"images must have shape (n, H, W, C), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise DataError(f"{images.shape[0]} images but labels of shape {labels.shape}")
        if images.shape[0] == 0:
            raise DataError("dataset is empty")
        if np.any(labels < 0) or np.any(labels != np.round(labels)):
            raise DataError("labels must be non-negative integers")
        labels = labels.astype(np.int64)
        if class_count is None:
            class_count = max(2, int(labels.max()) + 1)
        if labels.max() >= class_count:
            raise DataError(f"label {int(labels.max())} out of range for {class_count} classes")
        self.images = np.clip(images, 0.0, 1.0)
        self.labels = labels
        self.class_count = int(class_count)

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.images[i], int(self.labels[i]))

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.images[idx], self.labels[idx], self.class_count)


# --------------------------------------------------------------------------
# loading


def _read_image(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("L", "RGB"):
                arr = np.asarray(img)
            elif img.mode in ("1", "LA"):
                arr = np.asarray(img.convert("L"))
            else:
                arr = np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def load_image_dir(path, labels_file=None) -> Dataset:
    """Load 8-bit PNG/PGM/PPM images listed in a ``filename,label`` CSV."""
    root = Path(path)
    labels_path = Path(labels_file) if labels_file is not None else root / "labels.csv"
    if not labels_path.is_file():
        raise DataError(f"labels file {labels_path} not found")
    images, labels = [], []
    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["filename", "label"]:
            raise DataError(f"{labels_path}: header must be 'filename,label', got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{labels_path} row {row_no}: expected 2 fields, got {len(row)}")
            name, label = row[0].strip(), row[1].strip()
            try:
                value = int(label)
            except ValueError:
                raise DataError(f"{labels_path} row {row_no}: unknown label {label!r}") from None
            if value < 0:
                raise DataError(f"{labels_path} row {row_no}: unknown label {label!r}")
            file = root / name
            if not file.is_file():
                raise DataError(f"{labels_path} row {row_no}: image file {name!r} not found")
            img = _read_image(file)
            if images and img.shape != images[0].shape:
                raise DataError(
                    f"{labels_path} row {row_no}: image {name!r} has shape {img.shape}, expected {images[0].shape}"
                )
            images.append(img)
            labels.append(value)
    if not images:
        raise DataError(f"{labels_path} lists no images")
    return Dataset(np.stack(images), np.array(labels))


def load_ltt_dataset(images_path, labels_path, class_count: int | None = None) -> Dataset:
    images = load_ltt(images_path)
    labels = load_ltt(labels_path)
    if images.ndim != 4:
        raise FormatError(f"{images_path}: images tensor must be rank 4, got rank {images.ndim}")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: labels tensor must be rank 1, got rank {labels.ndim}")
    if labels.shape[0] != images.shape[0]:
        raise FormatError(f"count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    return Dataset(images, labels, class_count)


def save_ltt_dataset(ds: Dataset, images_path, labels_path) -> None:
    save_ltt(images_path, ds.images)
    save_ltt(labels_path, ds.labels)


def load_dataset(path) -> Dataset:
    """Load a directory holding ``images.ltt``/``labels.ltt`` or ``labels.csv`` with images."""
    root = Path(path)
    if (root / "images.ltt").is_file():
        return load_ltt_dataset(root / "images.ltt", root / "labels.ltt")
    if (root / "labels.csv").is_file():
        return load_image_dir(root)
    raise DataError(f"{root}: no images.ltt or labels.csv found")


# --------------------------------------------------------------------------
# transforms


def normalize(ds: Dataset, mean=0.5, std=0.5) -> Dataset:
    """Standardise each plane, then map back into [0, 1] via ``(x' + 1) / 2``.

    ``mean`` and ``std`` are scalars or per-channel sequences.  With the
    default constants the composition is the identity.
    """
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (ds.images.shape[-1],))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (ds.images.shape[-1],))
    if np.any(std == 0):
        raise UsageError("std must be non-zero")
    standard = (ds.images - mean) / std
    return Dataset(np.clip((standard + 1.0) / 2.0, 0.0, 1.0), ds.labels, ds.class_count)


def split(ds: Dataset, fractions: Sequence[float], seed: int = 0) -> list[Dataset]:
    """Shuffle by ``seed`` and cut into consecutive parts; rounding leftovers go to the first part."""
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise UsageError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise UsageError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(ds)
    sizes = [int(round(f * n)) for f in fractions[1:]]
    first = n - sum(sizes)
    sizes = [first] + sizes
    if any(s < 1 for s in sizes):
        raise UsageError(f"split of {n} samples by {fractions} leaves an empty part")
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(sizes)[:-1]
    return [ds.subset(part) for part in np.split(order, bounds)]


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = True
    vflip: bool = True
    rotate: bool = True
    probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise UsageError(f"probability must lie in [0, 1], got {self.probability}")

    @property
    def enabled(self) -> bool:
        return self.hflip or self.vflip or self.rotate


def augment(sample: Sample, config: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Random flips and quarter-turn rotations; the label is untouched."""
    img = sample.image
    if config.rotate and img.shape[0] != img.shape[1]:
        raise UsageError(f"rotation needs square images, got {img.shape[0]}x{img.shape[1]}")
    if config.hflip and rng.random() < config.probability:
        img = img[:, ::-1]
    if config.vflip and rng.random() < config.probability:
        img = img[::-1]
    if config.rotate and rng.random() < config.probability:
        img = np.rot90(img, k=int(rng.integers(1, 4)), axes=(0, 1))
    return Sample(np.ascontiguousarray(img), sample.label)


def augment_images(images: np.ndarray, labels, config: AugmentConfig, seed: int, epoch: int, indices) -> np.ndarray:
    """Augment a batch; sample ``i`` draws from a generator keyed by ``(seed, epoch, i)``."""
    out = np.empty_like(images)
    for pos, (img, label, i) in enumerate(zip(images, labels, indices)):
        rng = np.random.default_rng([seed, epoch, int(i)])
        out[pos] = augment(Sample(img, int(label)), config, rng).image
    return out


# --------------------------------------------------------------------------
# synthetic task


def synth_generate(count: int, size: int, seed: int = 0) -> Dataset:
    """Balanced binary task: class 1 holds a Gaussian blob on uniform noise.

    Noise is uniform on [0, 0.3]; the blob peaks at 0.9 with width
    ``size / 8`` and is centred uniformly inside the central half.
    """
    if count < 2 or size < 1:
        raise UsageError("synth_generate needs count >= 2 and size >= 1")
    rng = np.random.default_rng(seed)
    positives = count // 2
    labels = rng.permutation(np.r_[np.ones(positives, np.int64), np.zeros(count - positives, np.int64)])
    images = rng.uniform(0.0, 0.3, size=(count, size, size))
    sigma = size / 8.0
    centres = rng.uniform(size / 4.0, 3.0 * size / 4.0, size=(count, 2))
    yy, xx = np.mgrid[0:size, 0:size]
    for i in np.flatnonzero(labels):
        cy, cx = centres[i]
        images[i] += 0.9 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
    return Dataset(np.clip(images, 0.0, 1.0)[..., None], labels, 2)
