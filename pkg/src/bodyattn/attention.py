"""Scaled dot-product attention kernels: unmasked, densely masked, and sparse.

The dense masked kernel applies the mask by overwriting masked logits with the
most negative finite double. After max-subtraction those entries underflow to
exactly zero weight, so masked pairs contribute nothing while the arithmetic
stays plain dense BLAS. The sparse kernel computes only the unmasked logits
(a compiled loop over the row-compressed mask) and runs the softmax
segment-wise over unmasked entries; the weighted sum with V stays dense.

Both kernels optionally record the floating-point operations they execute
into an OpTally at vectorized-op granularity: a length-d dot product counts
d multiplies and d-1 additions. Indexed writes (mask application, weight
scatter) and softmax max-stabilization are bookkeeping, not counted
arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .graph import AttentionMask

__all__ = [
    "AttentionInput",
    "BiasMatrix",
    "MultiHeadParams",
    "OpTally",
    "DenseMaskPlan",
    "RowCompressedMask",
    "attention",
    "biased_attention",
    "dense_masked_attention",
    "sparse_masked_attention",
    "multi_head_masked_attention",
    "bias_from_mask",
    "vanilla_kernel",
    "dense_masked_kernel",
    "sparse_masked_kernel",
]

# Most negative finite double; stands in for -inf so that 0 * NEG_FILL can
# never produce NaN downstream, while exp(NEG_FILL - rowmax) underflows to 0.
NEG_FILL = np.finfo(np.float64).min


class OpTally:
    """Raw floating-point operation counts per kernel stage.

    Stages follow the analytical cost model: "qk" covers the scaled logit
    computation including the scale factor, "softmax" the exponentials,
    row sums and normalising divisions, "av" the weight-times-values product.
    """

    STAGES = ("qk", "softmax", "av")
    OPS = ("mul", "add", "div", "exp", "sqrt")

    def __init__(self) -> None:
        self.counts = {s: dict.fromkeys(self.OPS, 0) for s in self.STAGES}

    def record(self, stage: str, **ops: int) -> None:
        bucket = self.counts[stage]
        for name, count in ops.items():
            bucket[name] += int(count)

    def stage_total(self, stage: str, c1: int = 1, c2: int = 1) -> int:
        c = self.counts[stage]
        return c["mul"] + c["add"] + c["div"] + c2 * c["exp"] + c1 * c["sqrt"]


@dataclass(frozen=True)
class AttentionInput:
    """Query/key/value matrices sharing one (n, d_k) shape, all finite."""

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray

    def __post_init__(self) -> None:
        mats = []
        for name in ("Q", "K", "V"):
            m = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if m.ndim != 2:
                raise ValueError(f"{name} must be a matrix, got ndim={m.ndim}")
            if not np.isfinite(m).all():
                raise ValueError(f"{name} contains non-finite entries")
            mats.append(m)
        if not (mats[0].shape == mats[1].shape == mats[2].shape):
            raise ValueError("Q, K, V must share one (n, d_k) shape")
        for name, m in zip(("Q", "K", "V"), mats):
            object.__setattr__(self, name, m)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def d_k(self) -> int:
        return self.Q.shape[1]


@dataclass(frozen=True)
class BiasMatrix:
    """Additive logit bias; entries real or -inf, no all-(-inf) row."""

    B: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.B, dtype=np.float64)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"bias must be square, got shape {b.shape}")
        if np.isnan(b).any() or np.isposinf(b).any():
            raise ValueError("bias entries must be real or -inf")
        if (~np.isfinite(b)).all(axis=1).any():
            raise ValueError("bias has a row with no attendable element")
        object.__setattr__(self, "B", b)

    @property
    def n(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True)
class DenseMaskPlan:
    """Coordinates of the masked (zero) mask entries, for indexed overwrite."""

    n: int
    zero_rows: np.ndarray
    zero_cols: np.ndarray

    @classmethod
    def from_mask(cls, m: AttentionMask) -> "DenseMaskPlan":
        zr, zc = np.nonzero(m.entries == 0)
        return cls(m.n, zr, zc)


@dataclass(frozen=True)
class RowCompressedMask:
    """Unmasked coordinates in row-major order plus per-row segment bounds."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    starts: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_mask(cls, m: AttentionMask) -> "RowCompressedMask":
        rows, cols = np.nonzero(m.entries)
        counts = np.bincount(rows, minlength=m.n)
        if counts.min() < 1:
            raise ValueError("mask has a row with zero unmasked entries")
        starts = np.zeros(m.n, dtype=np.intp)
        np.cumsum(counts[:-1], out=starts[1:])
        return cls(m.n, rows.astype(np.intp), cols.astype(np.intp), starts, counts)

    @property
    def nnz(self) -> int:
        return self.rows.size


@numba.njit(cache=True)
def _masked_rowdots(Q, K, rows, cols, out):  # pragma: no cover - compiled
    d = Q.shape[1]
    for p in range(rows.shape[0]):
        i = rows[p]
        j = cols[p]
        acc = 0.0
        for t in range(d):
            acc += Q[i, t] * K[j, t]
        out[p] = acc


def vanilla_kernel(Q, K, V, tally: OpTally | None = None) -> np.ndarray:
    """Unmasked softmax(Q Kᵀ / sqrt(d_k)) V."""
    n, dk = Q.shape
    S = Q @ K.T
    S *= 1.0 / math.sqrt(dk)
    S -= S.max(axis=1, keepdims=True)
    np.exp(S, out=S)
    S /= S.sum(axis=1, keepdims=True)
    out = S @ V
    if tally is not None:
        tally.record("qk", mul=n * n * dk, add=n * n * (dk - 1))
        tally.record("qk", mul=n * n, sqrt=1)
        tally.record("softmax", exp=n * n, add=n * (n - 1), div=n * n)
        tally.record("av", mul=n * n * dk, add=n * dk * (n - 1))
    return out


def dense_masked_kernel(Q, K, V, plan: DenseMaskPlan, tally: OpTally | None = None) -> np.ndarray:
    """Masked attention via dense BLAS; executes the same arithmetic as vanilla."""
    n, dk = Q.shape
    S = Q @ K.T
    S *= 1.0 / math.sqrt(dk)
    S[plan.zero_rows, plan.zero_cols] = NEG_FILL
    S -= S.max(axis=1, keepdims=True)
    np.exp(S, out=S)
    S /= S.sum(axis=1, keepdims=True)
    out = S @ V
    if tally is not None:
        tally.record("qk", mul=n * n * dk, add=n * n * (dk - 1))
        tally.record("qk", mul=n * n, sqrt=1)
        tally.record("softmax", exp=n * n, add=n * (n - 1), div=n * n)
        tally.record("av", mul=n * n * dk, add=n * dk * (n - 1))
    return out


def sparse_masked_kernel(Q, K, V, plan: RowCompressedMask, tally: OpTally | None = None) -> np.ndarray:
    """Masked attention touching only unmasked logit positions.

    Logits for the plan's (row, col) pairs are computed by a compiled gather
    loop; the softmax runs segment-wise over each row's unmasked entries.
    The resulting weights scatter into a dense matrix for the final BLAS
    product with V, which the cost model also keeps dense.
    """
    n, dk = Q.shape
    logits = np.empty(plan.nnz)
    _masked_rowdots(Q, K, plan.rows, plan.cols, logits)
    logits *= 1.0 / math.sqrt(dk)
    mx = np.maximum.reduceat(logits, plan.starts)
    logits -= np.repeat(mx, plan.counts)
    np.exp(logits, out=logits)
    ssum = np.add.reduceat(logits, plan.starts)
    logits /= np.repeat(ssum, plan.counts)
    W = np.zeros((n, n))
    W[plan.rows, plan.cols] = logits
    out = W @ V
    if tally is not None:
        nnz = plan.nnz
        tally.record("qk", mul=nnz * dk, add=nnz * (dk - 1))
        tally.record("qk", mul=nnz, sqrt=1)
        tally.record("softmax", exp=nnz, add=nnz - n, div=nnz)
        tally.record("av", mul=n * n * dk, add=n * dk * (n - 1))
    return out


def attention(inp: AttentionInput) -> np.ndarray:
    """Plain scaled dot-product attention; every token attends everywhere."""
    return vanilla_kernel(inp.Q, inp.K, inp.V)


def biased_attention(inp: AttentionInput, bias: BiasMatrix) -> np.ndarray:
    """Attention with an additive logit bias (real or -inf entries)."""
    if bias.n != inp.n:
        raise ValueError(f"bias is {bias.n}x{bias.n}, input has n={inp.n}")
    S = inp.Q @ inp.K.T
    S *= 1.0 / math.sqrt(inp.d_k)
    S += bias.B
    S -= S.max(axis=1, keepdims=True)
    np.exp(S, out=S)
    S /= S.sum(axis=1, keepdims=True)
    return S @ inp.V


def bias_from_mask(m: AttentionMask) -> BiasMatrix:
    """Binary mask as a bias: 0 where attendable, -inf where masked."""
    b = np.where(m.entries == 1, 0.0, -np.inf)
    return BiasMatrix(b)


def dense_masked_attention(inp: AttentionInput, m: AttentionMask) -> np.ndarray:
    if m.n != inp.n:
        raise ValueError(f"mask is {m.n}x{m.n}, input has n={inp.n}")
    return dense_masked_kernel(inp.Q, inp.K, inp.V, DenseMaskPlan.from_mask(m))


def sparse_masked_attention(inp: AttentionInput, m: AttentionMask) -> np.ndarray:
    if m.n != inp.n:
        raise ValueError(f"mask is {m.n}x{m.n}, input has n={inp.n}")
    return sparse_masked_kernel(inp.Q, inp.K, inp.V, RowCompressedMask.from_mask(m))


@dataclass(frozen=True)
class MultiHeadParams:
    """Per-head projection weights: wq/wk/wv are (h, d_head, d_model), wo (d_model, d_model)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @property
    def heads(self) -> int:
        return self.wq.shape[0]


def multi_head_masked_attention(
    x: np.ndarray, m: AttentionMask, params: MultiHeadParams, h: int
) -> np.ndarray:
    """h parallel masked attention heads, concatenated and projected back."""
    x = np.asarray(x, dtype=np.float64)
    n, d_model = x.shape
    if d_model % h != 0:
        raise ValueError(f"d_model={d_model} not divisible by h={h}")
    if params.heads != h:
        raise ValueError(f"params carry {params.heads} heads, expected {h}")
    if m.n != n:
        raise ValueError(f"mask is {m.n}x{m.n}, input has n={n}")
    plan = DenseMaskPlan.from_mask(m)
    outs = []
    for i in range(h):
        q = x @ params.wq[i].T
        k = x @ params.wk[i].T
        v = x @ params.wv[i].T
        outs.append(dense_masked_kernel(q, k, v, plan))
    return np.concatenate(outs, axis=1) @ params.wo.T
