"""Similarity between a linearized parent and a child, two ways.

``approx_similarity`` is the one-pass path: baseline score plus a single
weighted-output gradient contracted against the scaled parameter change.
``oracle_similarity`` is the step-by-step path: materialize the linearized
parent's outputs from explicit per-sample Jacobians, then apply the baseline
metric. The oracle exists to validate the one-pass path and costs N*K
backward passes instead of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nncore import (ContractError, ParamVector, forward, jacobian,
                      weighted_output_grad)
from .metrics import FeatureBatch, baseline_similarity
from .weights import pi_weights

__all__ = ["LinearizedEval", "AlignmentError", "aligned_delta",
           "approx_similarity", "oracle_similarity", "linearized_outputs",
           "tapped_features"]


class AlignmentError(ValueError):
    """Parent and child parameter layouts cannot be aligned at the tap."""


@dataclass(frozen=True)
class LinearizedEval:
    alpha: float
    g: np.ndarray              # (N, K): per-row alpha * J_i @ delta
    parent_id: str
    child_id: str


def _layers_at_or_below(tap: str, n_layers: int) -> int:
    if tap == "logits":
        return n_layers
    return int(tap[3:])


def aligned_delta(parent, child, tap: str) -> ParamVector:
    """theta_c - theta_p in the parent's layout.

    Blocks at or below the tap must match shapes exactly (those carry
    gradient); blocks above the tap may differ (reinitialized heads) and
    contribute zero, since the tapped feature's Jacobian there is zero.
    """
    p, c = parent.params, child.params
    needed = _layers_at_or_below(tap, parent.arch.n_layers)
    child_blocks = {e.name: e.shape for e in c.layout}
    delta = np.zeros(len(p))
    for entry in p.layout:
        layer = int(entry.name.split(".")[0][5:])
        shape_c = child_blocks.get(entry.name)
        if layer <= needed:
            if shape_c != entry.shape:
                raise AlignmentError(
                    f"block {entry.name} differs at/below tap {tap!r}: "
                    f"{entry.shape} vs {shape_c}")
            delta[entry.offset:entry.offset + entry.size] = (
                c.block(entry.name) - p.block(entry.name)).ravel()
        elif shape_c == entry.shape:
            delta[entry.offset:entry.offset + entry.size] = (
                c.block(entry.name) - p.block(entry.name)).ravel()
        # else: incompatible block above the tap, zero contribution
    return p.with_values(delta)


def tapped_features(record, inputs: np.ndarray, tap: str) -> FeatureBatch:
    res = forward(record.arch, record.params, inputs, taps=(tap,))
    return FeatureBatch(res.features[tap], tap=tap, model_id=record.id)


def approx_similarity(kind: str, parent, child, inputs: np.ndarray,
                      tap: str = "logits", alpha: float = 0.01,
                      p: float = 4.0, t: float = 0.01) -> float:
    """First-order score: one backward pass regardless of N and K."""
    if alpha < 0:
        raise ContractError("alpha must be non-negative")
    x = tapped_features(parent, inputs, tap)
    y = tapped_features(child, inputs, tap)
    base = baseline_similarity(kind, x, y, p=p, t=t)
    if alpha == 0.0:
        return base
    delta = aligned_delta(parent, child, tap)
    pi = pi_weights(kind, x, y, p=p, t=t)
    wog = weighted_output_grad(parent.arch, parent.params, inputs, pi.rows, tap)
    return base + float(wog.values @ (alpha * delta.values))


def linearized_outputs(parent, child, inputs: np.ndarray, tap: str,
                       alpha: float) -> LinearizedEval:
    """Materialize per-row alpha * J_i @ delta via explicit Jacobians."""
    delta = aligned_delta(parent, child, tap)
    inputs = np.asarray(inputs, dtype=np.float64)
    n = inputs.shape[0]
    k = parent.arch.tap_width(tap)
    g = np.empty((n, k))
    for i in range(n):
        j = jacobian(parent.arch, parent.params, inputs[i], tap=tap)
        g[i] = alpha * (j @ delta.values)
    if not np.all(np.isfinite(g)):
        raise ContractError("non-finite linearized outputs")
    return LinearizedEval(alpha=alpha, g=g, parent_id=parent.id,
                          child_id=child.id)


def oracle_similarity(kind: str, parent, child, inputs: np.ndarray,
                      tap: str = "logits", alpha: float = 0.01,
                      p: float = 4.0, t: float = 0.01) -> float:
    """Exact metric on the materialized linearized parent (no metric Taylor step)."""
    x = tapped_features(parent, inputs, tap)
    y = tapped_features(child, inputs, tap)
    lin = linearized_outputs(parent, child, inputs, tap, alpha)
    return baseline_similarity(kind, x.values + lin.g, y.values, p=p, t=t)
