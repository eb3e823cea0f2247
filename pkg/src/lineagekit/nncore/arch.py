"""Architecture specs and the forward/backward entry points for subject MLPs.

The subject models whose lineage is detected are plain multi-layer
perceptrons: linear layers with an activation-only nonlinearity and no
normalization. Named feature taps sit at layer boundaries ("act1" after the
first activation, ..., "logits" at the output) so similarity can be measured
on intermediate features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (ContractError, Node, NumericError, Tape,
                     grad_scalar_node)
from .params import ParamVector

__all__ = ["ArchSpec", "ForwardResult", "forward", "grad_scalar", "jacobian",
           "weighted_output_grad", "init_params", "JacobianBudgetError"]

DEFAULT_JACOBIAN_BUDGET = 5_000_000  # max K * |theta| entries materialized


class JacobianBudgetError(RuntimeError):
    """Explicit Jacobian would exceed the memory budget; use the approximated path."""


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "mlp"
    layer_sizes: tuple[int, ...] = (16, 64, 32, 5)  # d_in, hidden..., K
    activation: str = "relu"

    def __post_init__(self):
        if self.kind != "mlp":
            raise ContractError(f"unsupported architecture kind {self.kind!r}")
        if len(self.layer_sizes) < 2:
            raise ContractError("need at least input and output sizes")
        if self.activation != "relu":
            raise ContractError(f"unsupported activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    def tap_names(self) -> list[str]:
        return [f"act{i}" for i in range(1, self.n_layers)] + ["logits"]

    def tap_width(self, tap: str) -> int:
        if tap == "logits":
            return self.d_out
        if tap.startswith("act"):
            i = int(tap[3:])
            if 1 <= i < self.n_layers:
                return self.layer_sizes[i]
        raise ContractError(f"unknown tap {tap!r}; valid taps: {self.tap_names()}")

    def param_blocks(self) -> list[tuple[str, tuple[int, ...]]]:
        blocks = []
        for i in range(self.n_layers):
            blocks.append((f"layer{i + 1}.weight",
                           (self.layer_sizes[i], self.layer_sizes[i + 1])))
            blocks.append((f"layer{i + 1}.bias", (self.layer_sizes[i + 1],)))
        return blocks

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_blocks())

    def to_dict(self) -> dict:
        return {"kind": self.kind, "layer_sizes": list(self.layer_sizes),
                "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(kind=d["kind"], layer_sizes=tuple(d["layer_sizes"]),
                   activation=d["activation"])


def init_params(arch: ArchSpec, rng: np.random.Generator) -> ParamVector:
    """He-style fan-in initialization, zero biases."""
    blocks = []
    for name, shape in arch.param_blocks():
        if name.endswith("weight"):
            fan_in = shape[0]
            blocks.append((name, rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)))
        else:
            blocks.append((name, np.zeros(shape)))
    return ParamVector.from_blocks(blocks)


@dataclass
class ForwardResult:
    outputs: np.ndarray                    # (N, K)
    features: dict[str, np.ndarray]        # tap name -> (N, width)
    tape: Tape
    tap_nodes: dict[str, Node] = field(repr=False, default_factory=dict)
    param_nodes: dict[str, Node] = field(repr=False, default_factory=dict)
    param_template: ParamVector | None = field(repr=False, default=None)


def _check_layout(arch: ArchSpec, params: ParamVector) -> None:
    expected = arch.param_blocks()
    actual = [(e.name, e.shape) for e in params.layout]
    if actual != expected:
        raise ContractError(
            f"parameter layout does not match architecture: {actual} != {expected}")


def forward(arch: ArchSpec, params: ParamVector, inputs: np.ndarray,
            taps: tuple[str, ...] = ()) -> ForwardResult:
    """Batched forward pass, retaining a tape for backward.

    ``inputs`` is (N, d_in); requested ``taps`` are populated in the result.
    """
    _check_layout(arch, params)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != arch.d_in:
        raise ContractError(
            f"inputs must be (N, {arch.d_in}), got {inputs.shape}")
    for tap in taps:
        arch.tap_width(tap)

    tape = Tape()
    param_nodes = {name: tape.leaf(params.block(name), name=name)
                   for name in params.block_names()}
    x = tape.leaf(inputs, name="inputs")
    tap_nodes: dict[str, Node] = {}
    for i in range(1, arch.n_layers + 1):
        x = tape.add(tape.matmul(x, param_nodes[f"layer{i}.weight"]),
                     param_nodes[f"layer{i}.bias"])
        if not np.all(np.isfinite(x.value)):
            raise NumericError(f"non-finite activation at layer{i}")
        if i < arch.n_layers:
            x = tape.relu(x)
            tap_nodes[f"act{i}"] = x
    tap_nodes["logits"] = x

    features = {t: tap_nodes[t].value for t in taps}
    return ForwardResult(outputs=x.value, features=features, tape=tape,
                         tap_nodes=tap_nodes, param_nodes=param_nodes,
                         param_template=params)


def grad_scalar(result: ForwardResult, root: Node) -> ParamVector:
    """Gradient of a scalar tape node w.r.t. all parameters, same layout."""
    if root.value.size != 1:
        raise ContractError(f"grad_scalar root must be scalar, got {root.shape}")
    grad_scalar_node(root)
    template = result.param_template
    flat = np.zeros(len(template))
    for entry in template.layout:
        g = result.param_nodes[entry.name].grad
        if g is not None:
            flat[entry.offset:entry.offset + entry.size] = g.ravel()
    return template.with_values(flat)


def jacobian(arch: ArchSpec, params: ParamVector, x: np.ndarray,
             tap: str = "logits",
             budget: int = DEFAULT_JACOBIAN_BUDGET) -> np.ndarray:
    """Explicit (K, |theta|) Jacobian of the tapped feature for one input row.

    Step-by-step oracle only: runs one backward pass per output coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] != 1:
        raise ContractError("jacobian expects a single input row")
    k = arch.tap_width(tap)
    if k * len(params) > budget:
        raise JacobianBudgetError(
            f"K*|theta| = {k * len(params)} exceeds budget {budget}; "
            "use the approximated path")
    result = forward(arch, params, x, taps=(tap,))
    node = result.tap_nodes[tap]
    rows = np.empty((k, len(params)))
    for j in range(k):
        coord = result.tape.getitem(node, (0, j))
        rows[j] = grad_scalar(result, coord).values
    return rows


def weighted_output_grad(arch: ArchSpec, params: ParamVector,
                         inputs: np.ndarray, weights: np.ndarray,
                         tap: str = "logits") -> ParamVector:
    """Gradient of sum_i w_i . f(x_i) at the tap, in one backward pass.

    ``weights`` rows are treated as constants (they never receive gradient),
    so the result equals sum_i w_i J_i without materializing any Jacobian.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (inputs.shape[0], arch.tap_width(tap)):
        raise ContractError(
            f"weights must be (N, {arch.tap_width(tap)}), got {weights.shape}")
    result = forward(arch, params, inputs, taps=(tap,))
    tape = result.tape
    scalar = tape.sum(tape.mul(result.tap_nodes[tap], tape.constant(weights)))
    return grad_scalar(result, scalar)
