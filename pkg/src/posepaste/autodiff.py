"""Minimal reverse-mode automatic differentiation over a fixed op set.

A Tape records every op-produced Node in creation order, which is already
a topological order of the DAG, so the backward sweep is a single reverse
iteration that visits each record exactly once.  Tapes are single-use:
build the graph, ``finalize()``, then ``backward(loss)``.

The op set is exactly what the toy networks and the differentiable
compositing path need: 3x3 same-padding convolution, relu, 2x2 max
pooling, global average pooling, fully-connected, tanh, elementwise
arithmetic, stacking/indexing, and the custom warp/paste/loss ops that
live next to their forward implementations.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DomainError, TapeStateError


class Node:
    """One tape record: a value plus the closure that routes its gradient."""

    __slots__ = ("value", "tape", "parents", "requires_grad", "grad", "_backward", "op")

    def __init__(self, value, tape=None, parents=(), backward=None, op="const",
                 requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape}, grad={self.requires_grad})"


class Tape:
    """Ordered op records plus the registry of trainable parameters."""

    def __init__(self):
        self.records: list[Node] = []
        self.params: dict[str, Node] = {}
        self.finalized = False

    def param(self, name: str, value: np.ndarray) -> Node:
        if name in self.params:
            raise TapeStateError(f"parameter {name!r} registered twice")
        node = Node(value, tape=self, op=f"param:{name}", requires_grad=True)
        self.params[name] = node
        return node

    def register_params(self, values: dict[str, np.ndarray]) -> dict[str, Node]:
        return {name: self.param(name, v) for name, v in values.items()}

    def record(self, node: Node) -> Node:
        if self.finalized:
            raise TapeStateError("tape already finalized")
        self.records.append(node)
        return node

    def finalize(self):
        self.finalized = True

    def backward(self, loss: Node, seed=1.0) -> dict[str, np.ndarray]:
        """Gradient of ``loss`` for every registered parameter.

        Parameters the loss does not depend on get exact zero gradients.
        """
        if not self.finalized:
            raise TapeStateError("finalize() the tape before backward()")
        if loss.tape is not self:
            raise TapeStateError("loss node does not belong to this tape")
        loss.add_grad(np.asarray(seed, dtype=np.float64))
        for node in reversed(self.records):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.value))
                for name, p in self.params.items()}


def _as_node(x, tape) -> Node:
    return x if isinstance(x, Node) else Node(x, tape=tape)


def make_op(tape, value, parents, backward, op):
    needs = any(p.requires_grad for p in parents)
    node = Node(value, tape=tape, parents=parents,
                backward=backward if needs else None,
                op=op, requires_grad=needs)
    if needs:
        tape.record(node)
    return node


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------

def add(tape, a, b):
    a, b = _as_node(a, tape), _as_node(b, tape)

    def backward(up):
        if a.requires_grad:
            a.add_grad(_unbroadcast(up, a.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(up, b.shape))

    return make_op(tape, a.value + b.value, (a, b), backward, "add")


def sub(tape, a, b):
    a, b = _as_node(a, tape), _as_node(b, tape)

    def backward(up):
        if a.requires_grad:
            a.add_grad(_unbroadcast(up, a.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(-up, b.shape))

    return make_op(tape, a.value - b.value, (a, b), backward, "sub")


def mul(tape, a, b):
    a, b = _as_node(a, tape), _as_node(b, tape)

    def backward(up):
        if a.requires_grad:
            a.add_grad(_unbroadcast(up * b.value, a.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(up * a.value, b.shape))

    return make_op(tape, a.value * b.value, (a, b), backward, "mul")


def neg(tape, a):
    a = _as_node(a, tape)

    def backward(up):
        a.add_grad(-up)

    return make_op(tape, -a.value, (a,), backward, "neg")


def tanh(tape, a):
    a = _as_node(a, tape)
    out_value = np.tanh(a.value)

    def backward(up):
        a.add_grad(up * (1.0 - out_value * out_value))

    return make_op(tape, out_value, (a,), backward, "tanh")


def relu(tape, a):
    a = _as_node(a, tape)

    def backward(up):
        a.add_grad(up * (a.value > 0))

    return make_op(tape, np.maximum(a.value, 0.0), (a,), backward, "relu")


# -- structure ---------------------------------------------------------------

def reshape(tape, a, shape):
    a = _as_node(a, tape)
    old = a.shape

    def backward(up):
        a.add_grad(up.reshape(old))

    return make_op(tape, a.value.reshape(shape), (a,), backward, "reshape")


def stack(tape, nodes, axis=0):
    nodes = [_as_node(n, tape) for n in nodes]

    def backward(up):
        pieces = np.split(up, len(nodes), axis=axis)
        for n, piece in zip(nodes, pieces):
            if n.requires_grad:
                n.add_grad(np.squeeze(piece, axis=axis))

    return make_op(tape, np.stack([n.value for n in nodes], axis=axis),
                 tuple(nodes), backward, "stack")


def take_row(tape, a, index):
    """Select a[index] (index is a tuple over leading axes)."""
    a = _as_node(a, tape)

    def backward(up):
        g = np.zeros_like(a.value)
        g[index] = up
        a.add_grad(g)

    return make_op(tape, a.value[index], (a,), backward, "take_row")


def transpose(tape, a, axes):
    a = _as_node(a, tape)
    inverse = np.argsort(axes)

    def backward(up):
        a.add_grad(up.transpose(inverse))

    return make_op(tape, a.value.transpose(axes), (a,), backward, "transpose")


# -- network layers ----------------------------------------------------------

def _im2col(xp: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """(B, C, H+2, W+2) padded input -> (B, C*9, out_h*out_w) patch matrix."""
    b, c = xp.shape[:2]
    s = xp.strides
    view = as_strided(xp, shape=(b, c, 3, 3, out_h, out_w),
                      strides=(s[0], s[1], s[2], s[3], s[2], s[3]))
    return view.reshape(b, c * 9, out_h * out_w)


def conv3x3(tape, x, w, b):
    """Same-padding stride-1 3x3 convolution on (B, C, H, W)."""
    x, w, b = _as_node(x, tape), _as_node(w, tape), _as_node(b, tape)
    if x.value.ndim != 4:
        raise DomainError(f"conv input must be (B, C, H, W), got {x.shape}")
    batch, c_in, h, wd = x.value.shape
    c_out = w.value.shape[0]
    if w.value.shape != (c_out, c_in, 3, 3):
        raise DomainError(f"conv weight {w.value.shape} incompatible with input {x.shape}")
    xp = np.pad(x.value, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, h, wd)
    w2 = w.value.reshape(c_out, c_in * 9)
    out = np.matmul(w2, cols).reshape(batch, c_out, h, wd) + b.value[None, :, None, None]

    def backward(up):
        up2 = up.reshape(batch, c_out, h * wd)
        if b.requires_grad:
            b.add_grad(up.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w.add_grad(np.einsum("bor,bcr->oc", up2, cols).reshape(w.value.shape))
        if x.requires_grad:
            dcols = np.matmul(w2.T, up2).reshape(batch, c_in, 3, 3, h, wd)
            dxp = np.zeros_like(xp)
            for ky in range(3):
                for kx in range(3):
                    dxp[:, :, ky:ky + h, kx:kx + wd] += dcols[:, :, ky, kx]
            x.add_grad(dxp[:, :, 1:-1, 1:-1])

    return make_op(tape, out, (x, w, b), backward, "conv3x3")


def maxpool2(tape, x):
    """2x2 max pooling with stride 2; ties route to the first occurrence."""
    x = _as_node(x, tape)
    batch, c, h, wd = x.value.shape
    if h % 2 or wd % 2:
        raise DomainError(f"maxpool needs even spatial dims, got {h}x{wd}")
    r = x.value.reshape(batch, c, h // 2, 2, wd // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = r.reshape(batch, c, h // 2, wd // 2, 4)
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(up):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], up[..., None], axis=-1)
        dx = dflat.reshape(batch, c, h // 2, wd // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x.add_grad(dx.reshape(batch, c, h, wd))

    return make_op(tape, out, (x,), backward, "maxpool2")


def global_avg_pool(tape, x):
    x = _as_node(x, tape)
    batch, c, h, wd = x.value.shape

    def backward(up):
        x.add_grad(np.broadcast_to(up[:, :, None, None] / (h * wd), x.value.shape))

    return make_op(tape, x.value.mean(axis=(2, 3)), (x,), backward, "gap")


def linear(tape, x, w, b):
    """Fully connected: (B, F) @ (F, O) + (O,)."""
    x, w, b = _as_node(x, tape), _as_node(w, tape), _as_node(b, tape)
    if x.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]:
        raise DomainError(f"linear shapes incompatible: {x.shape} @ {w.value.shape}")

    def backward(up):
        if b.requires_grad:
            b.add_grad(up.sum(axis=0))
        if w.requires_grad:
            w.add_grad(x.value.T @ up)
        if x.requires_grad:
            x.add_grad(up @ w.value.T)

    return make_op(tape, x.value @ w.value + b.value, (x, w, b), backward, "linear")
