"""MNIST IDX / CIFAR-10 binary readers and deterministic mini-batching."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DataError(Exception):
    """Base class for dataset ingestion failures."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass
class Dataset:
    images: np.ndarray      # float32, (N, C, H, W), scaled to [0, 1]
    labels: np.ndarray      # int64, (N,)
    split: str
    name: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.split, self.name)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray


def _open_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _find(directory: Path, stem: str) -> Path:
    for candidate in (stem, stem + ".gz", stem.replace("-idx", ".idx"),
                      stem.replace("-idx", ".idx") + ".gz"):
        p = directory / candidate
        if p.exists():
            return p
    raise DataError(f"{stem} not found in {directory}")


def parse_idx(raw: bytes, expected_magic: int, source: str = "<bytes>") -> np.ndarray:
    """Decode an unsigned-byte IDX payload; returns a uint8 array."""
    if len(raw) < 4:
        raise TruncatedFileError(f"{source}: shorter than the magic word")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise BadMagicError(f"{source}: magic {magic:#010x}, expected {expected_magic:#010x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{source}: truncated dimension records")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    if any(d == 0 for d in dims[1:]):
        raise DataError(f"{source}: zero-sized dimension in {dims}")
    n = int(np.prod(dims))
    if len(raw) - header < n:
        raise TruncatedFileError(f"{source}: payload holds {len(raw) - header} bytes, header says {n}")
    if len(raw) - header > n:
        raise DataError(f"{source}: {len(raw) - header - n} trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def load_idx_pair(images_path: Path, labels_path: Path, split: str, name: str = "mnist") -> Dataset:
    images = parse_idx(_open_bytes(images_path), IDX_IMAGES_MAGIC, str(images_path))
    labels = parse_idx(_open_bytes(labels_path), IDX_LABELS_MAGIC, str(labels_path))
    if images.ndim != 3:
        raise DataError(f"{images_path}: expected 3 dimensions, got {images.ndim}")
    if labels.ndim != 1:
        raise DataError(f"{labels_path}: expected 1 dimension, got {labels.ndim}")
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images vs {len(labels)} labels ({split})")
    if labels.size and labels.max() > 9:
        raise DataError(f"{labels_path}: label {labels.max()} outside [0, 9]")
    x = images.astype(np.float32)[:, None, :, :] / np.float32(255)
    return Dataset(x, labels.astype(np.int64), split, name)


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory {directory} does not exist")
    out = []
    for split in ("train", "test"):
        img, lab = MNIST_FILES[split]
        out.append(load_idx_pair(_find(directory, img), _find(directory, lab), split))
    return out[0], out[1]


def parse_cifar_batch(raw: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise TruncatedFileError(f"{source}: {len(raw)} bytes is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataError(f"{source}: label {labels.max()} outside [0, 9]")
    images = rec[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory {directory} does not exist")
    # the extracted archive nests files under cifar-10-batches-bin/
    nested = directory / "cifar-10-batches-bin"
    if not (directory / CIFAR_TEST_FILE).exists() and nested.is_dir():
        directory = nested

    def read(fname: str):
        p = directory / fname
        if not p.exists():
            raise DataError(f"{fname} not found in {directory}")
        return parse_cifar_batch(p.read_bytes(), str(p))

    parts = [read(f) for f in CIFAR_TRAIN_FILES]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    test_x, test_y = read(CIFAR_TEST_FILE)
    if len(train_x) != 50000 or len(test_x) != 10000:
        raise CountMismatchError(f"CIFAR-10 record counts {len(train_x)}/{len(test_x)}, expected 50000/10000")
    scale = np.float32(255)
    return (Dataset(train_x.astype(np.float32) / scale, train_y, "train", "cifar10"),
            Dataset(test_x.astype(np.float32) / scale, test_y, "test", "cifar10"))


def load_dataset(name: str, directory) -> tuple[Dataset, Dataset]:
    if name == "mnist":
        return load_mnist(directory)
    if name == "cifar10":
        return load_cifar10(directory)
    raise DataError(f"unknown dataset {name!r}")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchPlan:
    seed: int
    epoch: int
    batch_size: int
    n: int
    shuffle: bool = True

    def permutation(self) -> np.ndarray:
        if not self.shuffle:
            return np.arange(self.n)
        rng = np.random.default_rng([self.seed, self.epoch])
        return rng.permutation(self.n)

    @property
    def num_batches(self) -> int:
        return self.n // self.batch_size


def batches(ds: Dataset, plan: BatchPlan) -> Iterator[Batch]:
    """Full mini-batches in permutation order; the trailing remainder is dropped."""
    if plan.batch_size <= 0:
        raise ValueError("batch size must be positive")
    if plan.batch_size > len(ds):
        raise ValueError(f"batch size {plan.batch_size} exceeds dataset size {len(ds)}")
    if plan.n != len(ds):
        raise ValueError(f"plan covers {plan.n} samples, dataset has {len(ds)}")
    perm = plan.permutation()
    b = plan.batch_size
    for i in range(plan.num_batches):
        idx = perm[i * b:(i + 1) * b]
        yield Batch(ds.images[idx], ds.labels[idx])


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (used for fixtures and exports)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())
