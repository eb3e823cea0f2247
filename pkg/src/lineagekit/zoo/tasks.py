"""Task specs: synthetic gaussian-blob classification and IDX file ingestion."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..nncore import ContractError

__all__ = ["Dataset", "TaskSpec", "make_dataset", "load_idx", "IdxFormatError"]


class IdxFormatError(ValueError):
    """Malformed IDX file; message carries the byte offset."""


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(max(self.train_y.max(), self.test_y.max())) + 1

    @property
    def d_in(self) -> int:
        return self.train_x.shape[1]


@dataclass(frozen=True)
class TaskSpec:
    """A dataset generator. With a fixed seed the dataset is bit-identical."""

    generator: str = "gaussian-blobs"   # or "idx-files"
    seed: int = 0
    classes: int = 5
    dims: int = 16
    spread: float = 1.0
    train_count: int = 512
    test_count: int = 256
    # idx-files only
    image_path: str = ""
    label_path: str = ""
    subsample: int = 0

    def to_dict(self) -> dict:
        return {
            "generator": self.generator, "seed": self.seed,
            "classes": self.classes, "dims": self.dims, "spread": self.spread,
            "train_count": self.train_count, "test_count": self.test_count,
            "image_path": self.image_path, "label_path": self.label_path,
            "subsample": self.subsample,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(**d)


def make_dataset(task: TaskSpec) -> Dataset:
    if task.generator == "gaussian-blobs":
        return _gaussian_blobs(task)
    if task.generator == "idx-files":
        x, y = load_idx(task.image_path, task.label_path)
        if task.subsample:
            rng = np.random.default_rng(task.seed)
            idx = rng.permutation(len(x))[:task.subsample]
            x, y = x[idx], y[idx]
        n_test = min(task.test_count, len(x) // 4)
        return Dataset(x[n_test:], y[n_test:], x[:n_test], y[:n_test])
    raise ContractError(f"unknown task generator {task.generator!r}")


def _gaussian_blobs(task: TaskSpec) -> Dataset:
    if task.classes < 2:
        raise ContractError("classification task needs at least 2 classes")
    rng = np.random.default_rng(task.seed)
    centers = rng.normal(0.0, 1.0, size=(task.classes, task.dims))
    # Normalize center spacing so `spread` directly controls overlap.
    centers *= 2.0 / np.sqrt(task.dims)

    def sample(count: int) -> tuple[np.ndarray, np.ndarray]:
        y = rng.integers(0, task.classes, size=count)
        x = centers[y] + rng.normal(0.0, task.spread, size=(count, task.dims)) / np.sqrt(task.dims)
        return x, y

    train_x, train_y = sample(task.train_count)
    test_x, test_y = sample(task.test_count)
    return Dataset(train_x, train_y, test_x, test_y)


_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


def load_idx(image_path: str, label_path: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse MNIST-format IDX files; pixels normalized to [0,1], images flattened."""
    images = _read_idx_images(image_path)
    labels = _read_idx_labels(label_path)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"image count {len(images)} != label count {len(labels)}")
    return images, labels


def _read_idx_images(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16:
        raise IdxFormatError(f"truncated image file at offset {len(data)}")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != _IDX_IMAGE_MAGIC:
        raise IdxFormatError(
            f"bad image magic 0x{magic:08x} at offset 0: expected 0x{_IDX_IMAGE_MAGIC:08x}")
    expected = 16 + count * rows * cols
    if len(data) < expected:
        raise IdxFormatError(f"truncated image file at offset {len(data)}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def _read_idx_labels(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise IdxFormatError(f"truncated label file at offset {len(data)}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != _IDX_LABEL_MAGIC:
        raise IdxFormatError(
            f"bad label magic 0x{magic:08x} at offset 0: expected 0x{_IDX_LABEL_MAGIC:08x}")
    if len(data) < 8 + count:
        raise IdxFormatError(f"truncated label file at offset {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)
