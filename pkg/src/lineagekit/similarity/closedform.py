"""Closed-form solutions of the two linearized-approximation optimality
problems: a per-sample rank-1 map and a shared parameter-direction vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nncore import ContractError, forward, jacobian

__all__ = ["ClosedFormSolution", "solve_per_sample_map", "solve_shared_direction"]


@dataclass(frozen=True)
class ClosedFormSolution:
    w: np.ndarray | None       # (K, |theta|) per-sample map, or None
    z: np.ndarray | None       # (|theta|,) shared direction, or None
    residual: float

    def __post_init__(self):
        if self.residual < 0:
            raise ContractError("residual must be non-negative")


def solve_per_sample_map(parent, child, x: np.ndarray) -> ClosedFormSolution:
    """Rank-1 map W = (f_c - f_p) delta^T / ||delta||^2 for one input.

    The per-sample problem min ||f_p + W delta - f_c|| is exactly solvable,
    so the residual is zero to rounding.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    delta = (child.params.values - parent.params.values)
    nrm2 = float(delta @ delta)
    if nrm2 == 0.0:
        raise ContractError("delta theta is zero; per-sample map is degenerate")
    fp = forward(parent.arch, parent.params, x).outputs[0]
    fc = forward(child.arch, child.params, x).outputs[0]
    w = np.outer(fc - fp, delta) / nrm2
    residual = float(np.linalg.norm(fp + w @ delta - fc))
    return ClosedFormSolution(w=w, z=None, residual=residual)


def solve_shared_direction(parent, child_outputs: np.ndarray,
                           inputs: np.ndarray,
                           rtol: float = 1e-10) -> ClosedFormSolution:
    """Minimum-norm Z solving the normal equations
    (sum_i J_i^T J_i) Z = sum_i J_i^T (y_i - f_p(x_i)).

    When the child outputs are exactly the linearized parent's outputs for
    some delta*, Z recovers the row-space projection of delta*.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    child_outputs = np.asarray(child_outputs, dtype=np.float64)
    n = inputs.shape[0]
    fp = forward(parent.arch, parent.params, inputs).outputs
    jac_rows = []
    rhs_rows = []
    for i in range(n):
        j = jacobian(parent.arch, parent.params, inputs[i])
        jac_rows.append(j)
        rhs_rows.append(child_outputs[i] - fp[i])
    stacked = np.vstack(jac_rows)                   # (N*K, |theta|)
    rhs = np.concatenate(rhs_rows)                  # (N*K,)
    # Min-norm least squares == min-norm solution of the normal equations.
    z, *_ = np.linalg.lstsq(stacked, rhs, rcond=rtol)
    residual = float(np.linalg.norm(stacked @ z - rhs))
    return ClosedFormSolution(w=None, z=z, residual=residual)
