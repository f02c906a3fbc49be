"""MNIST-style ingestion: IDX parsing, normalization, one-hot labels, batching.

Files are the classic big-endian IDX format (magic 2051 for image tensors,
2049 for label vectors); gzip-compressed variants are accepted transparently.
Pixels are scaled to [0, 1]. Datasets are immutable after loading and safe to
share between workers.
"""

from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from .network import one_hot

log = logging.getLogger(__name__)

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # n x m, float64
    labels: np.ndarray  # p x m, one-hot columns
    split: str
    image_shape: tuple[int, int] | None = None

    @property
    def num_cols(self) -> int:
        return self.inputs.shape[1]

    @property
    def num_features(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[0]

    @property
    def label_indices(self) -> np.ndarray:
        return np.argmax(self.labels, axis=0)


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if str(path).endswith(".gz") or head == b"\x1f\x8b":
            return gzip.decompress(fh.read())
        return fh.read()


def load_idx(images_path, labels_path, split="train", num_classes=None, center=False) -> Dataset:
    """Load an IDX image/label pair into a column-major dataset.

    Raises ``ValueError`` on a wrong magic number, truncated payload, or an
    image/label count mismatch. ``center=False`` keeps raw [0, 1] pixels;
    ``center=True`` additionally subtracts the per-feature mean.
    """
    raw_img = _read_bytes(images_path)
    if len(raw_img) < 16:
        raise ValueError(f"{images_path}: truncated image header")
    magic, count, rows, cols = struct.unpack(">IIII", raw_img[:16])
    if magic != IMAGES_MAGIC:
        raise ValueError(f"{images_path}: image magic {magic}, expected {IMAGES_MAGIC}")
    if len(raw_img) != 16 + count * rows * cols:
        raise ValueError(f"{images_path}: expected {count * rows * cols} pixel bytes")

    raw_lab = _read_bytes(labels_path)
    if len(raw_lab) < 8:
        raise ValueError(f"{labels_path}: truncated label header")
    lmagic, lcount = struct.unpack(">II", raw_lab[:8])
    if lmagic != LABELS_MAGIC:
        raise ValueError(f"{labels_path}: label magic {lmagic}, expected {LABELS_MAGIC}")
    if len(raw_lab) != 8 + lcount:
        raise ValueError(f"{labels_path}: expected {lcount} label bytes")
    if lcount != count:
        raise ValueError(f"count mismatch: {count} images vs {lcount} labels")

    pixels = np.frombuffer(raw_img, dtype=np.uint8, offset=16)
    inputs = pixels.reshape(count, rows * cols).T.astype(np.float64) / 255.0
    if center:
        inputs = inputs - inputs.mean(axis=1, keepdims=True)
    idx = np.frombuffer(raw_lab, dtype=np.uint8, offset=8)
    p = int(num_classes) if num_classes else int(idx.max()) + 1 if idx.size else 1
    return Dataset(inputs, one_hot(idx, p), split, image_shape=(rows, cols))


def to_idx_bytes(ds: Dataset):
    """Re-encode a dataset as raw IDX bytes: ``(image_bytes, label_bytes)``.

    Round-trips bit-exactly with :func:`load_idx` for datasets loaded with
    default normalization.
    """
    if ds.inputs.min() < 0.0 or ds.inputs.max() > 1.0:
        raise ValueError("inputs outside [0, 1]; cannot re-encode as bytes")
    rows, cols = ds.image_shape if ds.image_shape else (ds.num_features, 1)
    if rows * cols != ds.num_features:
        raise ValueError("image shape inconsistent with feature count")
    pixels = np.round(ds.inputs.T * 255.0).astype(np.uint8)
    img = struct.pack(">IIII", IMAGES_MAGIC, ds.num_cols, rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, ds.num_cols) + ds.label_indices.astype(np.uint8).tobytes()
    return img, lab


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int):
    """Shuffled partition of the column indices, deterministic in (seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, epoch]))
    perm = rng.permutation(ds.num_cols)
    return [perm[i : i + batch_size] for i in range(0, ds.num_cols, batch_size)]


def subset(ds: Dataset, k: int, seed: int) -> Dataset:
    """First k columns of a seeded shuffle of the dataset."""
    if not 1 <= k <= ds.num_cols:
        raise ValueError(f"k must be in [1, {ds.num_cols}], got {k}")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF]))
    idx = rng.permutation(ds.num_cols)[:k]
    out = Dataset(ds.inputs[:, idx].copy(), ds.labels[:, idx].copy(), ds.split, ds.image_shape)
    counts = np.bincount(out.label_indices, minlength=ds.num_classes)
    log.info("subset(%d of %d, seed=%d) class counts: %s", k, ds.num_cols, seed, counts.tolist())
    return out


def default_data_dir() -> str:
    return os.environ.get("FLNN_DATA_DIR", os.path.join("data", "mnist"))


def resolve_idx_pair(data_dir: str, split: str):
    """Locate the image/label files for a split, accepting .gz variants."""
    img_name, lab_name = MNIST_FILES[split]
    paths = []
    for name in (img_name, lab_name):
        for cand in (os.path.join(data_dir, name), os.path.join(data_dir, name + ".gz")):
            if os.path.exists(cand):
                paths.append(cand)
                break
        else:
            raise FileNotFoundError(
                f"missing {name}[.gz] under {data_dir!r} (set FLNN_DATA_DIR or --data-dir)"
            )
    return tuple(paths)


def load_mnist(data_dir: str | None = None, split: str = "train", center: bool = False) -> Dataset:
    """Load an MNIST split from a directory of (optionally gzipped) IDX files."""
    data_dir = data_dir or default_data_dir()
    img, lab = resolve_idx_pair(data_dir, split)
    return load_idx(img, lab, split=split, num_classes=10, center=center)
