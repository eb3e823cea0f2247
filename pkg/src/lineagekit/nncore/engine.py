"""Tape-based reverse-mode differentiation over dense float64 arrays.

A ``Tape`` records every operation as it happens; nodes are appended in
creation order, so the node list is already topologically sorted and a single
reverse traversal from a scalar root yields gradients for every reachable
leaf. All values are 64-bit floats.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tape",
    "Node",
    "NumericError",
    "ContractError",
    "backward_pass_count",
    "reset_backward_pass_count",
    "grad_scalar_node",
]


class NumericError(ValueError):
    """A non-finite value appeared where finite math was required."""


class ContractError(ValueError):
    """An operation was called outside its contract (shape, type, domain)."""


_counter_lock = threading.Lock()
_backward_passes = 0


def backward_pass_count() -> int:
    return _backward_passes


def reset_backward_pass_count() -> None:
    global _backward_passes
    with _counter_lock:
        _backward_passes = 0


def _bump_backward_counter() -> None:
    global _backward_passes
    with _counter_lock:
        _backward_passes += 1


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # Sum out prepended axes.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One recorded operation (or leaf) on a tape."""

    __slots__ = ("tape", "value", "parents", "backward_fn", "grad", "name", "idx")

    def __init__(self, tape: "Tape", value: np.ndarray, parents=(), backward_fn=None,
                 name: str = ""):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None
        self.name = name
        tape._register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    # Convenience operator sugar; everything routes through the tape ops.
    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)


class Tape:
    """Operation recorder. Confined to the thread that built it."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _register(self, node: Node) -> None:
        node.idx = len(self.nodes)
        self.nodes.append(node)

    # -- leaves ------------------------------------------------------------

    def leaf(self, value, name: str = "") -> Node:
        a = _as_array(value)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite leaf value {name!r}")
        return Node(self, a, name=name)

    def constant(self, value, name: str = "") -> Node:
        """A leaf that never receives gradient (stop-gradient semantics)."""
        a = _as_array(value)
        node = Node(self, a, name=name)
        node.grad = None
        return node

    def _wrap(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise ContractError("node belongs to a different tape")
            return x
        return self.constant(x)

    # -- elementwise -------------------------------------------------------

    def add(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        out = a.value + b.value

        def backward(g, node):
            return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

        return Node(self, out, (a, b), backward, "add")

    def sub(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        out = a.value - b.value

        def backward(g, node):
            return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

        return Node(self, out, (a, b), backward, "sub")

    def mul(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        out = a.value * b.value

        def backward(g, node):
            return (_unbroadcast(g * b.value, a.shape),
                    _unbroadcast(g * a.value, b.shape))

        return Node(self, out, (a, b), backward, "mul")

    def div(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        out = a.value / b.value

        def backward(g, node):
            return (_unbroadcast(g / b.value, a.shape),
                    _unbroadcast(-g * a.value / (b.value ** 2), b.shape))

        return Node(self, out, (a, b), backward, "div")

    def pow(self, a, exponent: float) -> Node:
        a = self._wrap(a)
        out = a.value ** exponent

        def backward(g, node):
            return (g * exponent * a.value ** (exponent - 1),)

        return Node(self, out, (a,), backward, "pow")

    def exp(self, a) -> Node:
        a = self._wrap(a)
        out = np.exp(a.value)

        def backward(g, node):
            return (g * node.value,)

        return Node(self, out, (a,), backward, "exp")

    def log(self, a) -> Node:
        a = self._wrap(a)
        out = np.log(a.value)

        def backward(g, node):
            return (g / a.value,)

        return Node(self, out, (a,), backward, "log")

    def sqrt(self, a) -> Node:
        a = self._wrap(a)
        out = np.sqrt(a.value)

        def backward(g, node):
            return (g * 0.5 / node.value,)

        return Node(self, out, (a,), backward, "sqrt")

    def relu(self, a) -> Node:
        a = self._wrap(a)
        out = np.maximum(a.value, 0.0)
        # Subgradient at 0 defined as 0 (mask is strict inequality).
        mask = (a.value > 0.0).astype(np.float64)

        def backward(g, node):
            return (g * mask,)

        return Node(self, out, (a,), backward, "relu")

    def tanh(self, a) -> Node:
        a = self._wrap(a)
        out = np.tanh(a.value)

        def backward(g, node):
            return (g * (1.0 - node.value ** 2),)

        return Node(self, out, (a,), backward, "tanh")

    # -- reductions --------------------------------------------------------

    def sum(self, a, axis=None, keepdims: bool = False) -> Node:
        a = self._wrap(a)
        out = a.value.sum(axis=axis, keepdims=keepdims)

        def backward(g, node):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Node(self, _as_array(out), (a,), backward, "sum")

    def mean(self, a, axis=None, keepdims: bool = False) -> Node:
        a = self._wrap(a)
        out = a.value.mean(axis=axis, keepdims=keepdims)
        count = a.value.size if axis is None else a.value.shape[axis]

        def backward(g, node):
            g = np.asarray(g) / count
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Node(self, _as_array(out), (a,), backward, "mean")

    # -- linear algebra ----------------------------------------------------

    def matmul(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise ContractError("matmul expects 2-D operands")
        out = a.value @ b.value

        def backward(g, node):
            return (g @ b.value.T, a.value.T @ g)

        return Node(self, out, (a, b), backward, "matmul")

    # -- shape -------------------------------------------------------------

    def reshape(self, a, shape) -> Node:
        a = self._wrap(a)
        out = a.value.reshape(shape)

        def backward(g, node):
            return (g.reshape(a.shape),)

        return Node(self, out, (a,), backward, "reshape")

    def transpose(self, a, axes=None) -> Node:
        a = self._wrap(a)
        out = np.transpose(a.value, axes)
        inv = None if axes is None else np.argsort(axes)

        def backward(g, node):
            return (np.transpose(g, inv),)

        return Node(self, out, (a,), backward, "transpose")

    def getitem(self, a, index) -> Node:
        a = self._wrap(a)
        out = _as_array(a.value[index])

        def backward(g, node):
            full = np.zeros_like(a.value)
            np.add.at(full, index, g)
            return (full,)

        return Node(self, out, (a,), backward, "getitem")

    def concat(self, parts, axis: int = 0) -> Node:
        parts = [self._wrap(p) for p in parts]
        out = np.concatenate([p.value for p in parts], axis=axis)
        sizes = [p.value.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def backward(g, node):
            return tuple(np.split(g, splits, axis=axis))

        return Node(self, out, tuple(parts), backward, "concat")

    # -- convolution (single sample, CHW) ----------------------------------

    def conv2d(self, x, w, b, padding: int = 0) -> Node:
        """x: (C_in, H, W); w: (C_out, C_in, kh, kw); b: (C_out,)."""
        x, w, b = self._wrap(x), self._wrap(w), self._wrap(b)
        cin, h, wid = x.value.shape
        cout, cin_w, kh, kw = w.value.shape
        if cin != cin_w:
            raise ContractError("conv2d channel mismatch")
        xp = np.pad(x.value, ((0, 0), (padding, padding), (padding, padding)))
        oh = h + 2 * padding - kh + 1
        ow = wid + 2 * padding - kw + 1
        # im2col: (oh*ow, cin*kh*kw)
        cols = np.empty((oh * ow, cin * kh * kw))
        idx = 0
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, i:i + oh, j:j + ow]  # (cin, oh, ow)
                cols[:, idx * cin:(idx + 1) * cin] = patch.reshape(cin, -1).T
                idx += 1
        wmat = w.value.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
        out = (cols @ wmat + b.value).T.reshape(cout, oh, ow)

        def backward(g, node):
            gmat = g.reshape(cout, -1).T  # (oh*ow, cout)
            gw = (cols.T @ gmat).reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
            gb = gmat.sum(axis=0)
            gcols = gmat @ wmat.T  # (oh*ow, cin*kh*kw)
            gxp = np.zeros_like(xp)
            idx2 = 0
            for i in range(kh):
                for j in range(kw):
                    piece = gcols[:, idx2 * cin:(idx2 + 1) * cin].T.reshape(cin, oh, ow)
                    gxp[:, i:i + oh, j:j + ow] += piece
                    idx2 += 1
            if padding:
                gx = gxp[:, padding:-padding, padding:-padding]
            else:
                gx = gxp
            return (gx, gw, gb)

        return Node(self, out, (x, w, b), backward, "conv2d")

    # -- composites --------------------------------------------------------

    def softmax(self, a, axis: int = -1) -> Node:
        a = self._wrap(a)
        shifted = self.sub(a, np.max(a.value, axis=axis, keepdims=True))
        e = self.exp(shifted)
        return self.div(e, self.sum(e, axis=axis if axis >= 0 else a.value.ndim + axis,
                                    keepdims=True))

    def logsumexp(self, a, axis: int) -> Node:
        a = self._wrap(a)
        m = np.max(a.value, axis=axis, keepdims=True)
        e = self.exp(self.sub(a, m))
        return self.add(self.log(self.sum(e, axis=axis, keepdims=False)),
                        np.squeeze(m, axis=axis))


def grad_scalar_node(root: Node) -> None:
    """One backward traversal from a scalar root; fills ``grad`` on reachable nodes."""
    if root.value.ndim != 0 and root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    tape = root.tape
    for node in tape.nodes:
        node.grad = None
    root.grad = np.ones_like(root.value)
    # Reverse creation order is a valid reverse topological order.
    for node in reversed(tape.nodes[:root.idx + 1]):
        if node.grad is None or node.backward_fn is None:
            continue
        grads = node.backward_fn(node.grad, node)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad = parent.grad + g
    _bump_backward_counter()
