"""The learned lineage detector.

Per modality, a two-layer CNN encoder (1x1 kernels first to expose
element-level parent/child relationships, then 3x3 with per-sample channel
normalization and ReLU) pooled to one token. Tokens get learnable modality
embeddings, are concatenated with a cls token, and pass through one
pre-norm transformer layer; a linear head reads the cls position. With one
modality the token sequence is just [cls; that token].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nncore import ContractError, Node, ParamVector, Tape, grad_scalar_node
from .data import StackedInput

__all__ = ["DetectorConfig", "DetectorModel"]

_NORM_EPS = 1e-5


@dataclass(frozen=True)
class DetectorConfig:
    d_model: int = 32
    n_heads: int = 4
    ffn_mult: int = 4
    conv_mid: int = 3
    use_weights: bool = True
    use_features: bool = True
    no_parent: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ContractError("d_model must divide evenly across heads")
        if not (self.use_weights or self.use_features):
            raise ContractError("all modalities disabled")


class DetectorModel:
    def __init__(self, config: DetectorConfig):
        self.config = config

    # -- parameters --------------------------------------------------------

    def param_blocks(self) -> list[tuple[str, tuple[int, ...]]]:
        c = self.config
        d, mid, ffn = c.d_model, c.conv_mid, c.ffn_mult * c.d_model
        blocks: list[tuple[str, tuple[int, ...]]] = []
        modalities = []
        if c.use_weights:
            modalities.append("wenc")
        if c.use_features:
            modalities.append("fenc")
        for m in modalities:
            blocks += [
                (f"{m}.conv1.weight", (mid, 2, 1, 1)), (f"{m}.conv1.bias", (mid,)),
                (f"{m}.conv2.weight", (d, mid, 3, 3)), (f"{m}.conv2.bias", (d,)),
                (f"{m}.norm.gamma", (d,)), (f"{m}.norm.beta", (d,)),
            ]
        if c.use_weights:
            blocks.append(("embed.weights", (d,)))
        if c.use_features:
            blocks.append(("embed.features", (d,)))
        blocks += [
            ("cls", (d,)),
            ("attn.wq", (d, d)), ("attn.bq", (d,)),
            ("attn.wk", (d, d)), ("attn.bk", (d,)),
            ("attn.wv", (d, d)), ("attn.bv", (d,)),
            ("attn.wo", (d, d)), ("attn.bo", (d,)),
            ("ln1.gamma", (d,)), ("ln1.beta", (d,)),
            ("ln2.gamma", (d,)), ("ln2.beta", (d,)),
            ("ffn.w1", (d, ffn)), ("ffn.b1", (ffn,)),
            ("ffn.w2", (ffn, d)), ("ffn.b2", (d,)),
            ("head.weight", (d, 1)), ("head.bias", (1,)),
        ]
        if c.no_parent:
            blocks.append(("noparent.score", (1,)))
        return blocks

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        """Symmetric fan-based initialization; norm/LN gains start at one."""
        blocks = []
        for name, shape in self.param_blocks():
            if name.endswith("gamma"):
                arr = np.ones(shape)
            elif name.endswith(("bias", "beta", "bq", "bk", "bv", "bo", "b1", "b2")):
                arr = np.zeros(shape)
            elif name in ("cls", "embed.weights", "embed.features"):
                arr = rng.normal(0.0, 0.02, size=shape)
            elif name == "noparent.score":
                arr = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
                if name.startswith(("attn", "ffn", "head")):
                    fan_in = shape[0]
                bound = np.sqrt(1.0 / fan_in)
                arr = rng.uniform(-bound, bound, size=shape)
            blocks.append((name, arr))
        return ParamVector.from_blocks(blocks)

    # -- forward -----------------------------------------------------------

    def _encode(self, tape: Tape, pn: dict[str, Node], prefix: str,
                plane: np.ndarray) -> Node:
        x = tape.leaf(plane, name=f"{prefix}.input")
        x = tape.conv2d(x, pn[f"{prefix}.conv1.weight"],
                        pn[f"{prefix}.conv1.bias"], padding=0)
        x = tape.conv2d(x, pn[f"{prefix}.conv2.weight"],
                        pn[f"{prefix}.conv2.bias"], padding=1)
        # Per-channel statistics over the spatial extent (batch size is 1).
        d = x.shape[0]
        flat = tape.reshape(x, (d, -1))
        mu = tape.mean(flat, axis=1, keepdims=True)
        cent = tape.sub(flat, mu)
        var = tape.mean(tape.pow(cent, 2.0), axis=1, keepdims=True)
        normed = tape.div(cent, tape.sqrt(tape.add(var, _NORM_EPS)))
        gamma = tape.reshape(pn[f"{prefix}.norm.gamma"], (d, 1))
        beta = tape.reshape(pn[f"{prefix}.norm.beta"], (d, 1))
        x = tape.relu(tape.add(tape.mul(normed, gamma), beta))
        # Adaptive average pooling to 1x1.
        return tape.mean(x, axis=1)    # (d,)

    def _layernorm(self, tape: Tape, x: Node, gamma: Node, beta: Node) -> Node:
        mu = tape.mean(x, axis=1, keepdims=True)
        cent = tape.sub(x, mu)
        var = tape.mean(tape.pow(cent, 2.0), axis=1, keepdims=True)
        normed = tape.div(cent, tape.sqrt(tape.add(var, _NORM_EPS)))
        return tape.add(tape.mul(normed, tape.reshape(gamma, (1, -1))),
                        tape.reshape(beta, (1, -1)))

    def _attention(self, tape: Tape, pn: dict[str, Node], x: Node) -> Node:
        d = self.config.d_model
        heads = self.config.n_heads
        dh = d // heads
        q = tape.add(tape.matmul(x, pn["attn.wq"]), pn["attn.bq"])
        k = tape.add(tape.matmul(x, pn["attn.wk"]), pn["attn.bk"])
        v = tape.add(tape.matmul(x, pn["attn.wv"]), pn["attn.bv"])
        outs = []
        for h in range(heads):
            sl = (slice(None), slice(h * dh, (h + 1) * dh))
            qh, kh, vh = (tape.getitem(q, sl), tape.getitem(k, sl),
                          tape.getitem(v, sl))
            logits = tape.mul(tape.matmul(qh, tape.transpose(kh)),
                              1.0 / np.sqrt(dh))
            att = tape.softmax(logits, axis=-1)
            outs.append(tape.matmul(att, vh))
        merged = tape.concat(outs, axis=1)
        return tape.add(tape.matmul(merged, pn["attn.wo"]), pn["attn.bo"])

    def forward_score(self, tape: Tape, pn: dict[str, Node],
                      stacked: StackedInput) -> Node:
        c = self.config
        tokens = [tape.reshape(pn["cls"], (1, c.d_model))]
        if c.use_weights:
            if stacked.weights is None:
                raise ContractError("weights modality enabled but plane missing")
            z = self._encode(tape, pn, "wenc", stacked.weights)
            tokens.append(tape.reshape(tape.add(z, pn["embed.weights"]),
                                       (1, c.d_model)))
        if c.use_features:
            if stacked.features is None:
                raise ContractError("features modality enabled but plane missing")
            z = self._encode(tape, pn, "fenc", stacked.features)
            tokens.append(tape.reshape(tape.add(z, pn["embed.features"]),
                                       (1, c.d_model)))
        x = tape.concat(tokens, axis=0)                 # (T, D)
        a = tape.add(x, self._attention(
            tape, pn, self._layernorm(tape, x, pn["ln1.gamma"], pn["ln1.beta"])))
        h = self._layernorm(tape, a, pn["ln2.gamma"], pn["ln2.beta"])
        ff = tape.add(tape.matmul(
            tape.relu(tape.add(tape.matmul(h, pn["ffn.w1"]), pn["ffn.b1"])),
            pn["ffn.w2"]), pn["ffn.b2"])
        out = tape.add(a, ff)
        cls_final = tape.getitem(out, (slice(0, 1), slice(None)))
        score = tape.add(tape.matmul(cls_final, pn["head.weight"]),
                         pn["head.bias"])
        return tape.reshape(score, ())

    # -- convenience -------------------------------------------------------

    def make_param_nodes(self, tape: Tape, params: ParamVector) -> dict[str, Node]:
        return {name: tape.leaf(params.block(name), name=name)
                for name in params.block_names()}

    def score(self, params: ParamVector, stacked: StackedInput) -> float:
        tape = Tape()
        pn = self.make_param_nodes(tape, params)
        return float(self.forward_score(tape, pn, stacked).value)

    def candidate_logits(self, tape: Tape, pn: dict[str, Node],
                         candidates) -> Node:
        """Scores for all candidates; with no-parent mode, candidate scores
        are mean-centered and divided by M before the extra logit joins."""
        scores = [tape.reshape(self.forward_score(tape, pn, s), (1,))
                  for s in candidates]
        vec = tape.concat(scores, axis=0)
        if self.config.no_parent:
            m = len(candidates)
            centered = tape.sub(vec, tape.mean(vec))
            normalized = tape.mul(centered, 1.0 / m)
            vec = tape.concat([normalized, pn["noparent.score"]], axis=0)
        return vec

    def predict(self, params: ParamVector, candidates) -> tuple[int, np.ndarray]:
        tape = Tape()
        pn = self.make_param_nodes(tape, params)
        logits = self.candidate_logits(tape, pn, candidates).value
        e = np.exp(logits - logits.max())
        return int(np.argmax(logits == logits.max())), e / e.sum()

    def grad(self, params: ParamVector, loss_root: Node,
             param_nodes: dict[str, Node]) -> ParamVector:
        grad_scalar_node(loss_root)
        flat = np.zeros(len(params))
        for entry in params.layout:
            g = param_nodes[entry.name].grad
            if g is not None:
                flat[entry.offset:entry.offset + entry.size] = g.ravel()
        return params.with_values(flat)
