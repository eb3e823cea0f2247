"""Baseline similarity metrics between two feature batches.

All metrics are negated distances (larger = more similar) except CKA and DC,
which are squared alignment/correlation scores in [0, 1]. CKA uses the
linear kernel; DC is computed on doubly centered pairwise-distance matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nncore import ContractError

__all__ = ["FeatureBatch", "DegenerateInputError", "METRIC_KINDS",
           "baseline_similarity", "centering_matrix", "distance_matrix"]

METRIC_KINDS = ("l1", "l2", "linf", "lp", "lse", "cka", "dc")


class DegenerateInputError(ValueError):
    """Constant feature batch: CKA/DC denominator vanishes."""


@dataclass(frozen=True)
class FeatureBatch:
    values: np.ndarray         # (N, K)
    tap: str = "logits"
    model_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractError(f"feature batch must be 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError("non-finite feature values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


def centering_matrix(n: int) -> np.ndarray:
    return np.eye(n) - np.ones((n, n)) / n


def distance_matrix(x: np.ndarray) -> np.ndarray:
    """Pairwise euclidean distances between rows.

    Computed from explicit row differences rather than the squared-norm
    identity: slower, but avoids the cancellation error that identity
    suffers for nearby or translated rows.
    """
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def _as_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    xv = x.values if isinstance(x, FeatureBatch) else np.asarray(x, dtype=np.float64)
    yv = y.values if isinstance(y, FeatureBatch) else np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape:
        raise ContractError(f"feature batches differ in shape: {xv.shape} vs {yv.shape}")
    return xv, yv


def baseline_similarity(kind: str, x, y, p: float = 4.0, t: float = 0.01) -> float:
    xv, yv = _as_pair(x, y)
    n, k = xv.shape
    d = xv - yv
    if kind == "l1":
        return float(-np.abs(d).sum() / (n * k))
    if kind == "l2":
        return float(-(d ** 2).sum() / (n * k))
    if kind == "linf":
        # The same 1/NK scale family as l1/l2 keeps the LSE limit well-posed.
        return float(-np.abs(d).max(axis=1).sum() / (n * k))
    if kind == "lp":
        if p < 1:
            raise ContractError("p must be >= 1")
        return float(-(np.abs(d) ** p).sum() / (n * k))
    if kind == "lse":
        if t <= 0:
            raise ContractError("t must be positive")
        m = t * np.abs(d)
        shift = m.max(axis=1, keepdims=True)
        lse = shift[:, 0] + np.log(np.exp(m - shift).sum(axis=1))
        return float(-lse.sum() / (n * k * t))
    if kind == "cka":
        return _cka(xv, yv)
    if kind == "dc":
        return _dc(xv, yv)
    raise ContractError(f"unknown metric kind {kind!r}; valid: {METRIC_KINDS}")


def _require_rows(x: np.ndarray, kind: str) -> None:
    if x.shape[0] < 2:
        raise ContractError(f"{kind} needs at least 2 rows (centering)")


def _cka(x: np.ndarray, y: np.ndarray) -> float:
    _require_rows(x, "cka")
    h = centering_matrix(x.shape[0])
    gx = h @ (x @ x.T) @ h
    gy = h @ (y @ y.T) @ h
    xx = float((gx * gx).sum())
    yy = float((gy * gy).sum())
    if xx == 0.0 or yy == 0.0:
        raise DegenerateInputError("constant feature batch: CKA denominator is zero")
    xy = float((gx * gy).sum())
    return xy ** 2 / (xx * yy)


def _dc(x: np.ndarray, y: np.ndarray) -> float:
    _require_rows(x, "dc")
    h = centering_matrix(x.shape[0])
    dx = h @ distance_matrix(x) @ h
    dy = h @ distance_matrix(y) @ h
    xx = float((dx * dx).sum())
    yy = float((dy * dy).sum())
    if xx == 0.0 or yy == 0.0:
        raise DegenerateInputError("constant feature batch: DC denominator is zero")
    xy = float((dx * dy).sum())
    return xy ** 2 / (xx * yy)
