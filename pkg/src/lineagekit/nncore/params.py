"""Flat parameter vectors with a named layout.

A ``ParamVector`` is the single source of truth for a model's parameters:
one contiguous float64 array plus an ordered layout of (name, shape, offset)
entries. Two vectors with identical layouts are element-wise alignable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ContractError, NumericError

__all__ = ["LayoutEntry", "ParamVector"]


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class ParamVector:
    def __init__(self, values: np.ndarray, layout: tuple[LayoutEntry, ...]):
        values = np.asarray(values, dtype=np.float64).ravel()
        expected = 0
        for entry in layout:
            if entry.offset != expected:
                raise ContractError(
                    f"layout entry {entry.name!r} at offset {entry.offset}, "
                    f"expected {expected} (entries must be contiguous)")
            expected += entry.size
        if expected != values.size:
            raise ContractError(
                f"layout covers {expected} values but array has {values.size}")
        if not np.all(np.isfinite(values)):
            raise NumericError("non-finite parameter values")
        self.values = values
        self.layout = tuple(layout)

    @classmethod
    def from_blocks(cls, blocks: list[tuple[str, np.ndarray]]) -> "ParamVector":
        layout = []
        offset = 0
        flat = []
        for name, arr in blocks:
            arr = np.asarray(arr, dtype=np.float64)
            layout.append(LayoutEntry(name, arr.shape, offset))
            offset += arr.size
            flat.append(arr.ravel())
        values = np.concatenate(flat) if flat else np.zeros(0)
        return cls(values, tuple(layout))

    def block(self, name: str) -> np.ndarray:
        for entry in self.layout:
            if entry.name == name:
                return self.values[entry.offset:entry.offset + entry.size].reshape(entry.shape)
        raise KeyError(name)

    def block_names(self) -> list[str]:
        return [e.name for e in self.layout]

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def replace_block(self, name: str, arr: np.ndarray) -> "ParamVector":
        """New vector with one named block replaced (shape may differ).

        Used for head reshaping when the fine-tuning target has a different
        class count; offsets after the block are recomputed.
        """
        blocks = []
        found = False
        for entry in self.layout:
            if entry.name == name:
                blocks.append((name, np.asarray(arr, dtype=np.float64)))
                found = True
            else:
                blocks.append((entry.name, self.block(entry.name)))
        if not found:
            raise KeyError(name)
        return ParamVector.from_blocks(blocks)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def __len__(self) -> int:
        return self.values.size

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check_aligned(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check_aligned(other)
        return self.with_values(self.values - other.values)

    def scale(self, factor: float) -> "ParamVector":
        return self.with_values(self.values * factor)

    def _check_aligned(self, other: "ParamVector") -> None:
        if not self.same_layout(other):
            raise ContractError("parameter layouts differ; vectors are not alignable")

    def __repr__(self) -> str:
        return f"ParamVector(|theta|={len(self)}, blocks={len(self.layout)})"
