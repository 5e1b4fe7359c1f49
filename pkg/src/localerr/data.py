"""MNIST IDX loading, one-hot labels, mini-batching and subsampling."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConsistencyError, DatasetNotFoundError, DomainError, IdxFormatError
from .numerics import Rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
N_CLASSES = 10
DATA_DIR_ENV = "LOCALERR_DATA_DIR"
DEFAULT_DATA_DIR = Path.home() / ".cache" / "localerr" / "mnist"
FETCH_HINT = "run `python scripts/fetch_mnist.py` or set $" + DATA_DIR_ENV

_SPLIT_PREFIX = {"train": "train", "test": "t10k"}


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Images as a (count, n_pixels) float64 array in [0, 1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        # read-only views; the caller's arrays stay writable
        images = np.asarray(self.images, dtype=np.float64).view()
        labels = np.asarray(self.labels).astype(np.int64)
        if images.ndim != 2:
            raise ConsistencyError(f"images must be 2-D, got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ConsistencyError(f"{images.shape[0]} images but labels have shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise ConsistencyError("labels must lie in 0..9")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.images.shape[1]

    def take(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(self.images[index], self.labels[index])


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise OSError(f"truncated IDX file: expected {n} bytes of {what}, got {len(buf)}")
    return buf


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 pixels with shape (count, rows * cols)."""
    with _open(path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "header"))
        if magic != IMAGES_MAGIC:
            raise IdxFormatError(f"{path}: bad image magic 0x{magic:08x}")
        n = count * rows * cols
        pixels = np.frombuffer(_read_exact(f, n, "pixels"), dtype=np.uint8)
    return pixels.reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, "header"))
        if magic != LABELS_MAGIC:
            raise IdxFormatError(f"{path}: bad label magic 0x{magic:08x}")
        return np.frombuffer(_read_exact(f, count, "labels"), dtype=np.uint8).copy()


def write_idx(images_path, labels_path, pixels, labels, shape=(28, 28)) -> None:
    """Write uint8 pixels (count, rows*cols) and labels as an IDX pair."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    rows, cols = shape
    if pixels.shape != (labels.shape[0], rows * cols):
        raise ConsistencyError(f"pixels {pixels.shape} do not match labels/shape")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, pixels.shape[0], rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_idx(images_path, labels_path) -> LabeledDataset:
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"image count {pixels.shape[0]} does not match label count {labels.shape[0]}"
        )
    return LabeledDataset(pixels / 255.0, labels)


def data_dir(path=None) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else DEFAULT_DATA_DIR


def _find(directory: Path, prefix: str, kind: str) -> Path:
    # both the official "-idx3-ubyte" names and the dotted ".idx3-ubyte" variant
    idx = "idx3" if kind == "images" else "idx1"
    for sep in ("-", "."):
        for suffix in ("", ".gz"):
            p = directory / f"{prefix}-{kind}{sep}{idx}-ubyte{suffix}"
            if p.exists():
                return p
    raise DatasetNotFoundError(f"no MNIST {prefix} {kind} file in {directory}; {FETCH_HINT}")


def load_mnist(split: str = "train", directory=None) -> LabeledDataset:
    """Load the official MNIST ``train`` or ``test`` split."""
    if split not in _SPLIT_PREFIX:
        raise DomainError(f"split must be 'train' or 'test', got {split!r}")
    d = data_dir(directory)
    prefix = _SPLIT_PREFIX[split]
    return load_idx(_find(d, prefix, "images"), _find(d, prefix, "labels"))


def mnist_available(directory=None) -> bool:
    try:
        d = data_dir(directory)
        for prefix in _SPLIT_PREFIX.values():
            _find(d, prefix, "images")
            _find(d, prefix, "labels")
    except DatasetNotFoundError:
        return False
    return True


def save_cache(ds: LabeledDataset, path) -> None:
    np.savez(path, images=ds.images, labels=ds.labels)


def load_cache(path) -> LabeledDataset:
    with np.load(path) as f:
        return LabeledDataset(f["images"], f["labels"])


def one_hot(q) -> np.ndarray:
    """Kronecker-delta encoding. Scalar digit -> (10,), array of digits -> (n, 10)."""
    q_arr = np.asarray(q)
    if not np.issubdtype(q_arr.dtype, np.integer):
        if not np.all(q_arr == np.round(q_arr)):
            raise DomainError(f"labels must be integers, got {q!r}")
        q_arr = q_arr.astype(np.int64)
    if q_arr.size and (q_arr.min() < 0 or q_arr.max() >= N_CLASSES):
        raise DomainError(f"label out of range 0..9: {q!r}")
    return np.eye(N_CLASSES)[q_arr]


def minibatches(count, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """Shuffle ``range(count)`` and split it into consecutive batches.

    ``count`` may be an int or a dataset. The last batch may be short.
    """
    n = len(count) if hasattr(count, "__len__") else int(count)
    if batch_size < 1 or batch_size > max(n, 1):
        raise DomainError(f"batch_size must be in 1..{n}, got {batch_size}")
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def subsample(ds: LabeledDataset, k: int, rng: Rng) -> LabeledDataset:
    """k rows drawn without replacement."""
    if k < 0 or k > len(ds):
        raise DomainError(f"cannot draw {k} rows from a dataset of {len(ds)}")
    idx = rng.choice(len(ds), size=k, replace=False)
    return ds.take(idx)


def make_blobs(n: int, rng: Rng, n_features: int = 784, n_classes: int = 2, spread: float = 0.15) -> LabeledDataset:
    """Synthetic Gaussian blobs in [0, 1]^n_features for fast tests."""
    centers = rng.uniform(0.0, 1.0, size=(n_classes, n_features))
    labels = rng.integers(0, n_classes, size=n)
    x = centers[labels] + spread * rng.standard_normal((n, n_features))
    return LabeledDataset(np.clip(x, 0.0, 1.0), labels)
