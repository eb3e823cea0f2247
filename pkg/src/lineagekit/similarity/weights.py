"""Per-sample weighting rows that collapse a metric's Jacobian contraction
into one backward pass over a weighted output sum.

Each metric kind has its own row formula, derived from the first-order
expansion of the metric in the linearized parent's outputs. sign(0) is 0
everywhere; for DC, the direction vector for coincident rows is the zero
vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nncore import ContractError
from .metrics import (FeatureBatch, baseline_similarity, centering_matrix,
                      distance_matrix, _as_pair)

__all__ = ["PiWeights", "pi_weights"]


@dataclass(frozen=True)
class PiWeights:
    rows: np.ndarray           # (N, K), one row per sample
    kind: str
    prefactor: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.float64)
        if not np.all(np.isfinite(r)):
            raise ContractError("non-finite weighting rows")
        object.__setattr__(self, "rows", r)


def _np_softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def pi_weights(kind: str, x, y, p: float = 4.0, t: float = 0.01) -> PiWeights:
    xv, yv = _as_pair(x, y)
    n, k = xv.shape
    d = xv - yv
    sgn = np.sign(d)  # numpy's sign(0) == 0, matching the chosen convention

    if kind == "l1":
        rows = -sgn / (n * k)
        return PiWeights(rows, kind, {"scale": 1.0 / (n * k)})
    if kind == "l2":
        rows = -2.0 * d / (n * k)
        return PiWeights(rows, kind, {"scale": 2.0 / (n * k)})
    if kind == "lp":
        if p < 1:
            raise ContractError("p must be >= 1")
        rows = -(p / (n * k)) * sgn * np.abs(d) ** (p - 1)
        return PiWeights(rows, kind, {"p": p, "scale": p / (n * k)})
    if kind == "lse":
        if t <= 0:
            raise ContractError("t must be positive")
        rows = -(sgn * _np_softmax_rows(t * np.abs(d))) / (n * k)
        return PiWeights(rows, kind, {"t": t, "scale": 1.0 / (n * k)})
    if kind == "cka":
        s = baseline_similarity("cka", xv, yv)
        return PiWeights(s * _cka_direction(xv, yv), kind, {"baseline": s})
    if kind == "dc":
        s = baseline_similarity("dc", xv, yv)
        return PiWeights(s * _dc_direction(xv, yv), kind, {"baseline": s})
    raise ContractError(f"no one-pass weighting for metric kind {kind!r}")


def _cka_direction(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rows zeta_i: relative first-order sensitivity of squared linear CKA."""
    n = x.shape[0]
    h = centering_matrix(n)
    gx = h @ (x @ x.T) @ h
    gy = h @ (y @ y.T) @ h
    xy = float((gx * gy).sum())
    xx = float((gx * gx).sum())
    # gy = H Y Y^T H, so row i of gy @ X is H_{i:} Y Y^T H X.
    a = gy @ x
    b = gx @ x
    return 4.0 * a / xy - 4.0 * b / xx


def _dc_direction(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rows xi_i: relative first-order sensitivity of squared distance correlation."""
    n, k = x.shape
    h = centering_matrix(n)
    dx = distance_matrix(x)
    dy = distance_matrix(y)
    cdx = h @ dx @ h
    cdy = h @ dy @ h
    xy = float((cdx * cdy).sum())
    xx = float((cdx * cdx).sum())
    diff = x[:, None, :] - x[None, :, :]          # (N, N, K)
    zero_mask = dx == 0.0
    norm = np.where(zero_mask, 1.0, dx)
    directions = diff / norm[:, :, None]
    directions[zero_mask] = 0.0                   # coincident rows get zero vector
    rows = np.empty((n, k))
    for i in range(n):
        vy = cdy[i]                               # H_{i:} D_Y H (cdy = H D_Y H)
        vx = cdx[i]
        rows[i] = 4.0 * (vy @ directions[i]) / xy - 4.0 * (vx @ directions[i]) / xx
    return rows
