"""Dataset loading (IDX, comma-separated text), synthetic blobs and batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # N x d, float64
    labels: np.ndarray  # N, int64
    classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ConfigError(f"features must be a non-empty N x d matrix, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ConsistencyError(
                f"{self.features.shape[0]} samples but {self.labels.shape[0]} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise ConfigError(f"labels must lie in [0, {self.classes})")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features contain non-finite values")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.classes)

    def scaled(self, factor: float) -> "Dataset":
        return Dataset(self.features * factor, self.labels, self.classes)


def _read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, classes: int = 10) -> Dataset:
    """Read an IDX image/label pair; pixels are flattened and scaled by 1/255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), classes)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 ``images`` (N x rows x cols) and ``labels`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_text(path, classes: int | None = None) -> Dataset:
    """One sample per line: comma-separated features, integer label last."""
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.shape[1] < 2:
        raise FormatError(f"{path}: need at least one feature column and a label column")
    labels = rows[:, -1]
    if not np.all(labels == np.round(labels)):
        raise FormatError(f"{path}: label column must hold integers")
    labels = labels.astype(np.int64)
    return Dataset(rows[:, :-1].copy(), labels, classes or int(labels.max()) + 1)


def synth_blobs(n_per_class: int, d: int, classes: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs around block-indicator centers.

    Class ``c`` is centered on the vector whose ``c``-th block of ``d // classes``
    coordinates is 1 and whose other coordinates are 0.
    """
    if min(n_per_class, d, classes) < 1 or spread < 0:
        raise ConfigError("synth_blobs arguments must be positive")
    if d < classes:
        raise ConfigError(f"need d >= classes, got d={d}, classes={classes}")
    rng = np.random.default_rng(seed)
    block = d // classes
    centers = np.zeros((classes, d))
    for c in range(classes):
        centers[c, c * block:(c + 1) * block] = 1.0
    labels = np.repeat(np.arange(classes), n_per_class)
    features = centers[labels] + spread * rng.standard_normal((labels.size, d))
    order = rng.permutation(labels.size)
    return Dataset(features[order], labels[order], classes)


def batches(ds_or_n, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Shuffled index slices covering every sample exactly once."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    n = ds_or_n if isinstance(ds_or_n, int) else len(ds_or_n)
    perm = np.random.default_rng(epoch_seed).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def split(ds: Dataset, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
    perm = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:])
