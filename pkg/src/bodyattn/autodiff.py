"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to differentiate the policy pipeline exactly: a Tensor
wrapping an ndarray plus a closure that routes the incoming gradient to its
parents. Gradients accumulate by summation, broadcasting is undone by
summing over the broadcast axes, and the whole-graph walk is iterative so
deep compositions cannot hit the recursion limit.

The attention softmax gets a dedicated op with a hand-derived backward:
masked positions carry exactly zero weight in the forward pass, and the
softmax Jacobian then yields exactly zero gradient through them, which is
what makes the locality properties of masked encoders hold to the bit.
"""

from __future__ import annotations

import math

import numpy as np

from .attention import NEG_FILL, RowCompressedMask, sparse_masked_kernel

__all__ = [
    "Tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "matmul",
    "relu",
    "tanh",
    "reshape",
    "slice_last",
    "select_node",
    "take_axis0",
    "stack_nodes",
    "concat_last",
    "sum_all",
    "mean_all",
    "mean_axis",
    "layernorm",
    "scaled_attention",
    "distance_bias",
    "mse",
]


class Tensor:
    """Value plus tape bookkeeping. Leaves have no parents; grad starts None."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    excess = g.ndim - len(shape)
    if excess > 0:
        g = g.sum(axis=tuple(range(excess)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable Tensor's grad."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for t in reversed(order):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value, (a, b))
    def bw(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(g, b.value.shape))
    out._backward = bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value - b.value, (a, b))
    def bw(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(-g, b.value.shape))
    out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value * b.value, (a, b))
    def bw(g):
        _acc(a, _unbroadcast(g * b.value, a.value.shape))
        _acc(b, _unbroadcast(g * a.value, b.value.shape))
    out._backward = bw
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.value, 0.0), (a,))
    def bw(g):
        _acc(a, g * (a.value > 0))
    out._backward = bw
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    out = Tensor(y, (a,))
    def bw(g):
        _acc(a, g * (1.0 - y * y))
    out._backward = bw
    return out


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value, (a, b))
    def bw(g):
        _acc(a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape))
        _acc(b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape))
    out._backward = bw
    return out


# ---------------------------------------------------------------- shape plumbing


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.value.reshape(shape), (a,))
    def bw(g):
        _acc(a, g.reshape(a.value.shape))
    out._backward = bw
    return out


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """a[..., start:stop]."""
    out = Tensor(a.value[..., start:stop], (a,))
    def bw(g):
        full = np.zeros_like(a.value)
        full[..., start:stop] = g
        _acc(a, full)
    out._backward = bw
    return out


def select_node(a: Tensor, i: int) -> Tensor:
    """a[:, i, :] for (batch, n, d) tensors."""
    out = Tensor(a.value[:, i, :], (a,))
    def bw(g):
        full = np.zeros_like(a.value)
        full[:, i, :] = g
        _acc(a, full)
    out._backward = bw
    return out


def take_axis0(a: Tensor, i: int) -> Tensor:
    out = Tensor(a.value[i], (a,))
    def bw(g):
        full = np.zeros_like(a.value)
        full[i] = g
        _acc(a, full)
    out._backward = bw
    return out


def stack_nodes(parts: list[Tensor]) -> Tensor:
    """Stack (batch, d) parts into (batch, n, d) along axis 1."""
    out = Tensor(np.stack([p.value for p in parts], axis=1), tuple(parts))
    def bw(g):
        for i, p in enumerate(parts):
            _acc(p, g[:, i, :])
    out._backward = bw
    return out


def concat_last(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.value for p in parts], axis=-1), tuple(parts))
    widths = [p.value.shape[-1] for p in parts]
    def bw(g):
        off = 0
        for p, w in zip(parts, widths):
            _acc(p, g[..., off : off + w])
            off += w
    out._backward = bw
    return out


# ---------------------------------------------------------------- reductions


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.value.sum(), (a,))
    def bw(g):
        _acc(a, np.broadcast_to(g, a.value.shape).copy())
    out._backward = bw
    return out


def mean_all(a: Tensor) -> Tensor:
    size = a.value.size
    out = Tensor(a.value.mean(), (a,))
    def bw(g):
        _acc(a, np.broadcast_to(g / size, a.value.shape).copy())
    out._backward = bw
    return out


def mean_axis(a: Tensor, axis: int) -> Tensor:
    size = a.value.shape[axis]
    out = Tensor(a.value.mean(axis=axis), (a,))
    def bw(g):
        _acc(a, np.broadcast_to(np.expand_dims(g / size, axis), a.value.shape).copy())
    out._backward = bw
    return out


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    diff = sub(pred, Tensor(target))
    return mean_all(mul(diff, diff))


# ---------------------------------------------------------------- normalization


def layernorm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine part)."""
    mu = a.value.mean(axis=-1, keepdims=True)
    xc = a.value - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y, (a,))
    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        _acc(a, inv * (g - gm - y * gym))
    out._backward = bw
    return out


# ---------------------------------------------------------------- attention


def scaled_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: np.ndarray | None = None,
    bias: Tensor | None = None,
    sparse: bool = False,
) -> Tensor:
    """softmax(q kᵀ / sqrt(d) [+ bias] [masked]) v over (batch, n, d) tensors.

    ``mask`` is a static (n, n) binary array; masked weights are exactly zero
    in the forward pass and receive exactly zero gradient. ``bias`` is an
    additive (n, n) logit Tensor (the learnable soft variant). With
    ``sparse`` the forward weights come from the sparsity-exploiting kernel,
    sample by sample; the backward pass is unchanged.
    """
    bsz, n, d = q.value.shape
    scale = 1.0 / math.sqrt(d)
    if sparse and mask is not None:
        from .graph import AttentionMask

        plan = RowCompressedMask.from_mask(AttentionMask(mask))
        w = np.empty((bsz, n, n))
        outv = np.empty_like(v.value)
        eye = np.eye(n)
        for s in range(bsz):
            # with V = I the kernel returns the weight matrix itself
            w[s] = sparse_masked_kernel(q.value[s], k.value[s], eye, plan)
            outv[s] = w[s] @ v.value[s]
        if bias is not None:
            raise ValueError("sparse route does not take an additive bias")
    else:
        s_mat = (q.value @ np.swapaxes(k.value, -1, -2)) * scale
        if bias is not None:
            s_mat = s_mat + bias.value
        if mask is not None:
            s_mat[:, mask == 0] = NEG_FILL
        s_mat -= s_mat.max(axis=-1, keepdims=True)
        w = np.exp(s_mat)
        w /= w.sum(axis=-1, keepdims=True)
        outv = w @ v.value

    parents = (q, k, v) if bias is None else (q, k, v, bias)
    out = Tensor(outv, parents)

    def bw(g):
        dw = g @ np.swapaxes(v.value, -1, -2)
        _acc(v, np.swapaxes(w, -1, -2) @ g)
        ds = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
        if bias is not None:
            _acc(bias, ds.sum(axis=0))
        _acc(q, (ds @ k.value) * scale)
        _acc(k, (np.swapaxes(ds, -1, -2) @ q.value) * scale)

    out._backward = bw
    return out


def distance_bias(table: Tensor, dist: np.ndarray) -> Tensor:
    """Gather per-head logit biases from a (heads, max_dist+1) table.

    dist is an (n, n) integer distance matrix; output is (heads, n, n).
    """
    out = Tensor(table.value[:, dist], (table,))
    def bw(g):
        full = np.zeros_like(table.value)
        for h in range(full.shape[0]):
            np.add.at(full[h], dist, g[h])
        _acc(table, full)
    out._backward = bw
    return out
