"""Analytical FLOP model of vanilla vs masked attention, with counted validation.

The model prices one forward pass of a single head on one sample, stage by
stage: computing the scaled logits (qk), the row softmax, and the product of
the weights with V (av). Square roots cost c1 FLOPs and exponentials c2,
both symbolic constants defaulting to 1. The masked variant pays only for
the unmasked logit positions in the qk and softmax stages; the av stage is
dense in both variants.

Density eta is the fraction of NONZERO mask entries. The benchmark and CLI
layers report the complementary zero fraction zeta = 1 - eta; both names are
kept explicit because either convention alone invites sign mistakes.

counted_flops runs an instrumented kernel and converts its raw operation
tally into the same stage breakdown, so model and implementation can be
compared as exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass

from .attention import (
    AttentionInput,
    DenseMaskPlan,
    OpTally,
    RowCompressedMask,
    dense_masked_kernel,
    sparse_masked_kernel,
)
from .graph import AttentionMask

__all__ = [
    "FlopsModel",
    "FlopsBreakdown",
    "vanilla_flops",
    "masked_flops",
    "masked_flops_from_nnz",
    "flops_ratio_limit",
    "counted_flops",
]


@dataclass(frozen=True)
class FlopsModel:
    """Problem dimensions and cost constants for one attention forward pass."""

    n: int
    d_k: int
    density: float = 1.0
    c1: int = 1
    c2: int = 1

    def __post_init__(self) -> None:
        if self.n < 1 or self.d_k < 1:
            raise ValueError("n and d_k must be positive")
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density {self.density} outside (0, 1]")
        # Compare on the rounded nonzero count (what masked_flops realizes),
        # so the boundary density of exactly 1/n survives float rounding.
        if round(self.density * self.n * self.n) < self.n:
            raise ValueError(f"density {self.density} below 1/n for n={self.n}")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("cost constants must be nonnegative")


@dataclass(frozen=True)
class FlopsBreakdown:
    qk_flops: int
    softmax_flops: int
    av_flops: int

    @property
    def total(self) -> int:
        return self.qk_flops + self.softmax_flops + self.av_flops


def vanilla_flops(model: FlopsModel) -> FlopsBreakdown:
    """Dense attention cost: 4n²d_k + (2+c2)n² - nd_k - n + c1 in total."""
    n, d, c1, c2 = model.n, model.d_k, model.c1, model.c2
    return FlopsBreakdown(
        qk_flops=2 * n * n * d + c1,
        softmax_flops=(2 + c2) * n * n - n,
        av_flops=2 * n * n * d - n * d,
    )


def masked_flops_from_nnz(n: int, d_k: int, nnz: int, c1: int = 1, c2: int = 1) -> FlopsBreakdown:
    """Masked attention cost given the exact nonzero count of the mask."""
    if nnz < n:
        raise ValueError(f"nnz {nnz} below n={n}; every row needs one nonzero")
    if nnz > n * n:
        raise ValueError(f"nnz {nnz} exceeds n²")
    return FlopsBreakdown(
        qk_flops=2 * nnz * d_k + c1,
        softmax_flops=(2 + c2) * nnz - n,
        av_flops=2 * n * n * d_k - n * d_k,
    )


def masked_flops(model: FlopsModel) -> FlopsBreakdown:
    """Masked attention cost: (2η+2)n²d_k + (2+c2)ηn² - nd_k - n + c1 in total.

    ηn² is rounded to the nearest integer nonzero count so the breakdown stays
    integral; callers holding an actual mask should prefer masked_flops_from_nnz.
    """
    nnz = round(model.density * model.n * model.n)
    return masked_flops_from_nnz(model.n, model.d_k, nnz, model.c1, model.c2)


def flops_ratio_limit(d_k: int, density: float, c2: float = 1.0) -> float:
    """Limit of vanilla/masked total FLOPs as n grows, at fixed density."""
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density {density} outside (0, 1]")
    num = 4.0 * d_k + 2.0 + c2
    den = (2.0 * density + 2.0) * d_k + 2.0 * density + density * c2
    return num / den


def counted_flops(
    kernel: str,
    inp: AttentionInput,
    m: AttentionMask,
    c1: int = 1,
    c2: int = 1,
) -> FlopsBreakdown:
    """Run one instrumented forward pass and report its executed FLOPs.

    kernel "vanilla"/"dense" runs the dense masked kernel (identical
    arithmetic to unmasked attention); "masked"/"sparse" runs the
    sparsity-exploiting kernel.
    """
    if m.n != inp.n:
        raise ValueError(f"mask is {m.n}x{m.n}, input has n={inp.n}")
    tally = OpTally()
    if kernel in ("vanilla", "dense"):
        dense_masked_kernel(inp.Q, inp.K, inp.V, DenseMaskPlan.from_mask(m), tally)
    elif kernel in ("masked", "sparse"):
        sparse_masked_kernel(inp.Q, inp.K, inp.V, RowCompressedMask.from_mask(m), tally)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return FlopsBreakdown(
        qk_flops=tally.stage_total("qk", c1, c2),
        softmax_flops=tally.stage_total("softmax", c1, c2),
        av_flops=tally.stage_total("av", c1, c2),
    )
