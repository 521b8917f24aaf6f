"""Dataset ingestion and generation: the MNIST IDX binary format, synthetic
Gaussian blobs for fast experiments, and the train/validation split protocol.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class RawDataset:
    """Features scaled to [0, 1] plus integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    source: str = "synthetic"

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ParameterError("features must be 2-D with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ParameterError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    val_count: int = 1000
    seed: int = 0


def parse_idx(data: bytes) -> np.ndarray:
    """Decode IDX bytes into a uint8 array (1-D labels or 3-D image stack)."""
    if len(data) < 4:
        raise FormatError("IDX data shorter than the magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == LABEL_MAGIC:
        ndim = 1
    elif magic == IMAGE_MAGIC:
        ndim = 3
    else:
        raise FormatError(f"unsupported IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError("IDX header truncated")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = int(np.prod(dims))
    payload = len(data) - header
    if payload != expected:
        raise FormatError(f"IDX payload holds {payload} bytes, header declares {expected}")
    return np.frombuffer(data[header:], dtype=np.uint8).reshape(dims).copy()


def write_idx(arr: np.ndarray) -> bytes:
    """Encode a uint8 array back into IDX bytes (inverse of parse_idx)."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 1:
        magic = LABEL_MAGIC
    elif arr.ndim == 3:
        magic = IMAGE_MAGIC
    else:
        raise ParameterError(f"IDX supports 1-D labels or 3-D images, got {arr.ndim}-D")
    header = struct.pack(f">I{arr.ndim}I", magic, *arr.shape)
    return header + arr.tobytes()


def _read_maybe_gzipped(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def load_idx_file(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise FileNotFoundError(f"no IDX file at {path} (also tried {gz.name})")
    return parse_idx(_read_maybe_gzipped(path))


def images_to_features(images: np.ndarray) -> np.ndarray:
    """Flatten an image stack to one row per image, scaled by 1/255."""
    if images.ndim != 3:
        raise ParameterError(f"expected a 3-D image stack, got {images.ndim}-D")
    n = images.shape[0]
    return images.reshape(n, -1).astype(np.float64) / 255.0


def load_mnist(directory) -> tuple[RawDataset, RawDataset]:
    """Read the four standard IDX files (.gz accepted) from a directory."""
    directory = Path(directory)
    arrays = {key: load_idx_file(directory / name) for key, name in MNIST_FILES.items()}
    out = []
    for split_name in ("train", "test"):
        images = arrays[f"{split_name}_images"]
        labels = arrays[f"{split_name}_labels"].astype(np.int64)
        if images.shape[0] != labels.shape[0]:
            raise FormatError(f"{split_name}: {images.shape[0]} images vs {labels.shape[0]} labels")
        out.append(RawDataset(images_to_features(images), labels, num_classes=10, source="mnist"))
    return out[0], out[1]


def make_blobs(num_classes: int, per_class: int, dim: int, separation: float,
               cluster_std: float, seed: int) -> RawDataset:
    """Gaussian clusters at separation * (unit basis directions), scaled to [0, 1].

    The clip range is fixed by the parameters (not the data), so the scaling
    is deterministic and a zero-std cluster collapses exactly onto its center.
    """
    if num_classes < 2:
        raise ParameterError("need at least 2 classes")
    if separation <= 0:
        raise ParameterError("separation must be positive")
    if cluster_std < 0:
        raise ParameterError("cluster_std must be non-negative")
    if num_classes > dim:
        raise ParameterError("need dim >= num_classes to place centers on distinct axes")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    centers = np.zeros((num_classes, dim))
    centers[np.arange(num_classes), np.arange(num_classes)] = separation
    feats = centers[labels] + rng.normal(0.0, cluster_std, size=(labels.shape[0], dim))
    lo, hi = -4.0 * cluster_std, separation + 4.0 * cluster_std
    feats = (np.clip(feats, lo, hi) - lo) / (hi - lo)
    return RawDataset(feats, labels, num_classes, source="synthetic")


def split(raw: RawDataset, spec: SplitSpec) -> tuple[RawDataset, RawDataset]:
    """Shuffle, keep train_fraction for training, draw val_count validation
    samples from the held-out remainder; the rest is discarded."""
    if not 0.0 < spec.train_fraction < 1.0:
        raise ParameterError(f"train fraction must lie strictly in (0, 1), got {spec.train_fraction}")
    n = len(raw)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(n * spec.train_fraction)
    held_out = perm[n_train:]
    if spec.val_count > held_out.size:
        raise ParameterError(f"validation count {spec.val_count} exceeds held-out size {held_out.size}")
    train_idx = perm[:n_train]
    val_idx = held_out[: spec.val_count]
    make = lambda idx: RawDataset(raw.features[idx], raw.labels[idx], raw.num_classes, raw.source)
    return make(train_idx), make(val_idx)


def dataset_to_idx(raw: RawDataset, side: int | None = None) -> tuple[bytes, bytes]:
    """Dump a dataset as an (images, labels) IDX pair for cross-tool checks.

    Features are rescaled to bytes; side gives the image edge when the
    feature count is a perfect square of it (defaults to sqrt).
    """
    n, d = raw.features.shape
    if side is None:
        side = int(round(d ** 0.5))
    if side * side != d:
        raise ParameterError(f"feature count {d} is not a {side}x{side} image")
    images = np.clip(np.rint(raw.features * 255.0), 0, 255).astype(np.uint8).reshape(n, side, side)
    return write_idx(images), write_idx(raw.labels.astype(np.uint8))
