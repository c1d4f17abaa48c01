"""Timing harness for the dense and sparse masked-attention kernels.

Measures single-threaded runtime of both kernels on identical inputs across
node counts and mask sparsities, stamps each record with counted and modeled
FLOPs, and round-trips results through a fixed CSV schema. Runtime numbers
are host-specific; the FLOP columns are exact integers tied to the
analytical model.

Timing hygiene: the process is pinned to one CPU, every cell gets warm-up
calls before measurement (which also absorbs the compiled kernel's load
cost), each trial's runtime is the minimum over ``repeats`` back-to-back
calls, and mask preprocessing is timed separately from the kernel proper.
"""

from __future__ import annotations

import csv
import os
import sys
import time
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .attention import (
    AttentionInput,
    DenseMaskPlan,
    RowCompressedMask,
    dense_masked_kernel,
    sparse_masked_kernel,
)
from .flops import (
    FlopsModel,
    counted_flops,
    flops_ratio_limit,
    masked_flops,
    masked_flops_from_nnz,
    vanilla_flops,
)
from .graph import random_mask

__all__ = [
    "CSV_COLUMNS",
    "BenchRecord",
    "BenchPlan",
    "CellStats",
    "run_scaling_bench",
    "run_sparsity_sweep",
    "summarize",
    "speedup_by_n",
    "crossover_points",
    "report_flops",
    "emit_csv",
    "read_csv",
]

CSV_COLUMNS = (
    "kernel",
    "n",
    "d_k",
    "zero_fraction",
    "trial",
    "runtime_ns",
    "preprocess_ns",
    "counted_flops",
    "modeled_flops",
)

KERNELS = ("dense", "sparse")


@dataclass(frozen=True)
class BenchRecord:
    """One timed kernel invocation plus its exact FLOP accounting."""

    kernel: str
    n: int
    d_k: int
    zero_fraction: float
    trial: int
    runtime_ns: int
    preprocess_ns: int
    counted_flops: int
    modeled_flops: int

    def __post_init__(self) -> None:
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.runtime_ns <= 0:
            raise ValueError(f"runtime_ns must be positive, got {self.runtime_ns}")
        if self.preprocess_ns < 0:
            raise ValueError("preprocess_ns must be nonnegative")
        if self.counted_flops != self.modeled_flops:
            raise ValueError(
                f"counted_flops {self.counted_flops} != modeled_flops "
                f"{self.modeled_flops} for {self.kernel} kernel at n={self.n}"
            )


@dataclass(frozen=True)
class BenchPlan:
    """Grid of benchmark cells: every node count crossed with every sparsity."""

    node_counts: tuple[int, ...]
    zero_fractions: tuple[float, ...]
    trials: int
    seed: int
    d_k: int = 64
    repeats: int = 5

    def __post_init__(self) -> None:
        if not self.node_counts:
            raise ValueError("node_counts must be nonempty")
        if any(n < 1 for n in self.node_counts):
            raise ValueError("node counts must be positive")
        if not self.zero_fractions:
            raise ValueError("zero_fractions must be nonempty")
        for zf in self.zero_fractions:
            for n in self.node_counts:
                if not 0.0 <= zf <= 1.0 - 1.0 / n:
                    raise ValueError(f"zero_fraction {zf} outside [0, 1-1/n] for n={n}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.d_k < 1:
            raise ValueError("d_k must be positive")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass(frozen=True)
class CellStats:
    """Per-(kernel, n, zero_fraction) runtime mean and standard error."""

    kernel: str
    n: int
    d_k: int
    zero_fraction: float
    trials: int
    mean_runtime_ns: float
    stderr_runtime_ns: float
    mean_preprocess_ns: float


def _pin_single_cpu() -> set | None:
    """Pin this process to one CPU; returns the prior affinity set or None."""
    try:
        prior = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(prior)})
        return prior
    except (AttributeError, OSError):
        return None


def _restore_affinity(prior: set | None) -> None:
    if prior is not None:
        try:
            os.sched_setaffinity(0, prior)
        except OSError:
            pass


def _trial_inputs(seed: int, n: int, d_k: int, trial: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng((seed, n, trial))
    return (
        rng.standard_normal((n, d_k)),
        rng.standard_normal((n, d_k)),
        rng.standard_normal((n, d_k)),
    )


def _min_runtime_ns(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        if best is None or dt < best:
            best = dt
    return max(best, 1)


class _CellRun:
    """Warmed measurement context for one (n, zero_fraction) grid cell."""

    def __init__(self, n: int, d_k: int, zero_fraction: float, seed: int):
        self.n, self.d_k, self.zero_fraction, self.seed = n, d_k, zero_fraction, seed
        self.mask0 = random_mask(n, zero_fraction, seed ^ 0)
        self.q0, self.k0, self.v0 = _trial_inputs(seed, n, d_k, 0)
        dense0 = DenseMaskPlan.from_mask(self.mask0)
        sparse0 = RowCompressedMask.from_mask(self.mask0)

        # Warm-up, excluded from timing. The first sparse call also pays the
        # compiled kernel's one-time load cost.
        for _ in range(2):
            dense_masked_kernel(self.q0, self.k0, self.v0, dense0)
            sparse_masked_kernel(self.q0, self.k0, self.v0, sparse0)

        # Counted FLOPs are identical across trials of a cell because random
        # masks at fixed (n, zero_fraction) zero the same number of entries.
        inp0 = AttentionInput(self.q0, self.k0, self.v0)
        self.counted_dense = counted_flops("dense", inp0, self.mask0).total
        self.counted_sparse = counted_flops("sparse", inp0, self.mask0).total
        self.modeled_dense = vanilla_flops(FlopsModel(n, d_k)).total
        self.modeled_sparse = masked_flops_from_nnz(n, d_k, sparse0.nnz).total
        self.records: list[BenchRecord] = []

    def run_trial(self, trial: int, repeats: int) -> None:
        """Time both kernels on identical inputs for one trial."""
        if trial == 0:
            mask, (q, k, v) = self.mask0, (self.q0, self.k0, self.v0)
        else:
            mask = random_mask(self.n, self.zero_fraction, self.seed ^ trial)
            q, k, v = _trial_inputs(self.seed, self.n, self.d_k, trial)

        t0 = time.perf_counter_ns()
        dense_plan = DenseMaskPlan.from_mask(mask)
        pre_dense = time.perf_counter_ns() - t0
        t0 = time.perf_counter_ns()
        sparse_plan = RowCompressedMask.from_mask(mask)
        pre_sparse = time.perf_counter_ns() - t0

        dense_ns = _min_runtime_ns(lambda: dense_masked_kernel(q, k, v, dense_plan), repeats)
        sparse_ns = _min_runtime_ns(lambda: sparse_masked_kernel(q, k, v, sparse_plan), repeats)

        self.records.append(
            BenchRecord(
                kernel="dense",
                n=self.n,
                d_k=self.d_k,
                zero_fraction=self.zero_fraction,
                trial=trial,
                runtime_ns=dense_ns,
                preprocess_ns=pre_dense,
                counted_flops=self.counted_dense,
                modeled_flops=self.modeled_dense,
            )
        )
        self.records.append(
            BenchRecord(
                kernel="sparse",
                n=self.n,
                d_k=self.d_k,
                zero_fraction=self.zero_fraction,
                trial=trial,
                runtime_ns=sparse_ns,
                preprocess_ns=pre_sparse,
                counted_flops=self.counted_sparse,
                modeled_flops=self.modeled_sparse,
            )
        )


def run_scaling_bench(plan: BenchPlan) -> list[BenchRecord]:
    """Time both kernels over the plan's grid with fresh inputs per trial.

    Trials are executed round-robin across the grid cells rather than one
    cell at a time, so background load or clock drift spreads across every
    cell instead of distorting whichever cell it happened to land on.
    Records still come back grouped by cell in grid order.
    """
    prior = _pin_single_cpu()
    try:
        cells = [
            _CellRun(n, plan.d_k, zf, plan.seed)
            for n in plan.node_counts
            for zf in plan.zero_fractions
        ]
        for trial in range(plan.trials):
            for cell in cells:
                cell.run_trial(trial, plan.repeats)
        return [rec for cell in cells for rec in cell.records]
    finally:
        _restore_affinity(prior)


def run_sparsity_sweep(
    node_counts: Sequence[int],
    zero_fractions: Sequence[float],
    trials: int,
    seed: int,
    d_k: int = 64,
    repeats: int = 5,
) -> list[BenchRecord]:
    """Sweep mask sparsity at fixed node counts; same hygiene as the scaling bench.

    Grid points above a node count's feasible maximum (1 - 1/n, the identity
    mask) are skipped for that node count only.
    """
    records: list[BenchRecord] = []
    for n in node_counts:
        feasible = tuple(zf for zf in zero_fractions if zf <= 1.0 - 1.0 / n)
        if not feasible:
            continue
        plan = BenchPlan(
            node_counts=(n,),
            zero_fractions=feasible,
            trials=trials,
            seed=seed,
            d_k=d_k,
            repeats=repeats,
        )
        records.extend(run_scaling_bench(plan))
    return records


def summarize(records: Iterable[BenchRecord]) -> list[CellStats]:
    """Group records by (kernel, n, d_k, zero_fraction) and reduce runtimes."""
    cells: dict[tuple, list[BenchRecord]] = {}
    for rec in records:
        cells.setdefault((rec.kernel, rec.n, rec.d_k, rec.zero_fraction), []).append(rec)
    stats = []
    for (kernel, n, d_k, zf), recs in sorted(cells.items()):
        runtimes = np.array([r.runtime_ns for r in recs], dtype=np.float64)
        stderr = float(runtimes.std(ddof=1) / np.sqrt(runtimes.size)) if runtimes.size > 1 else 0.0
        stats.append(
            CellStats(
                kernel=kernel,
                n=n,
                d_k=d_k,
                zero_fraction=zf,
                trials=runtimes.size,
                mean_runtime_ns=float(runtimes.mean()),
                stderr_runtime_ns=stderr,
                mean_preprocess_ns=float(np.mean([r.preprocess_ns for r in recs])),
            )
        )
    return stats


def speedup_by_n(records: Iterable[BenchRecord], zero_fraction: float) -> dict[int, float]:
    """Mean dense runtime over mean sparse runtime, per node count."""
    dense: dict[int, float] = {}
    sparse: dict[int, float] = {}
    for cell in summarize(records):
        if cell.zero_fraction != zero_fraction:
            continue
        target = dense if cell.kernel == "dense" else sparse
        target[cell.n] = cell.mean_runtime_ns
    return {n: dense[n] / sparse[n] for n in sorted(dense) if n in sparse}


def crossover_points(records: Iterable[BenchRecord]) -> dict[int, float | None]:
    """Smallest zero fraction where the sparse kernel's mean beats the dense one.

    Scans each node count's sparsity grid in increasing order; None means the
    sparse kernel never won on this host.
    """
    by_n: dict[int, dict[float, dict[str, float]]] = {}
    for cell in summarize(records):
        by_n.setdefault(cell.n, {}).setdefault(cell.zero_fraction, {})[cell.kernel] = (
            cell.mean_runtime_ns
        )
    out: dict[int, float | None] = {}
    for n, grid in sorted(by_n.items()):
        out[n] = None
        for zf in sorted(grid):
            pair = grid[zf]
            if "dense" in pair and "sparse" in pair and pair["sparse"] < pair["dense"]:
                out[n] = zf
                break
    return out


def report_flops(
    n: int,
    d_k: int,
    zero_fraction: float,
    c1: int = 1,
    c2: int = 1,
    out: IO[str] | None = None,
) -> None:
    """Print the stage-by-stage FLOP table for vanilla vs masked attention."""
    if out is None:
        out = sys.stdout
    if not 0.0 <= zero_fraction < 1.0:
        raise ValueError(f"zero_fraction {zero_fraction} outside [0, 1)")
    density = 1.0 - zero_fraction
    model = FlopsModel(n=n, d_k=d_k, density=density, c1=c1, c2=c2)
    van = vanilla_flops(model)
    msk = masked_flops(model)
    nnz = round(density * n * n)

    print(f"attention FLOPs, one head, one sample: n={n} d_k={d_k} c1={c1} c2={c2}", file=out)
    print(
        f"mask: zero fraction (sparsity zeta) = {zero_fraction:.6g}, "
        f"nonzero fraction (density eta) = {density:.6g}, nnz = {nnz}",
        file=out,
    )
    print(f"{'stage':<10}{'vanilla':>16}{'masked':>16}", file=out)
    for stage, v, m in (
        ("qk", van.qk_flops, msk.qk_flops),
        ("softmax", van.softmax_flops, msk.softmax_flops),
        ("av", van.av_flops, msk.av_flops),
        ("total", van.total, msk.total),
    ):
        print(f"{stage:<10}{v:>16}{m:>16}", file=out)
    print(f"ratio vanilla/masked at n={n}: {van.total / msk.total:.4f}", file=out)
    print(
        f"asymptotic ratio (n -> inf):  {flops_ratio_limit(d_k, density, c2):.4f}",
        file=out,
    )


def emit_csv(records: Iterable[BenchRecord], path: str, append: bool = False) -> None:
    """Write records in the fixed column order; header exactly once per file."""
    header_needed = True
    if append and os.path.exists(path) and os.path.getsize(path) > 0:
        with open(path, "r", newline="") as fh:
            first = fh.readline().strip()
        if first != ",".join(CSV_COLUMNS):
            raise ValueError(f"existing file {path} has a different header")
        header_needed = False
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header_needed:
            writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    rec.kernel,
                    rec.n,
                    rec.d_k,
                    repr(rec.zero_fraction),
                    rec.trial,
                    rec.runtime_ns,
                    rec.preprocess_ns,
                    rec.counted_flops,
                    rec.modeled_flops,
                ]
            )


def read_csv(path: str) -> list[BenchRecord]:
    """Parse a bench CSV back into records; exact inverse of emit_csv."""
    records: list[BenchRecord] = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path} does not start with the bench CSV header")
        for row in reader:
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"{path}: expected {len(CSV_COLUMNS)} columns, got {len(row)}")
            records.append(
                BenchRecord(
                    kernel=row[0],
                    n=int(row[1]),
                    d_k=int(row[2]),
                    zero_fraction=float(row[3]),
                    trial=int(row[4]),
                    runtime_ns=int(row[5]),
                    preprocess_ns=int(row[6]),
                    counted_flops=int(row[7]),
                    modeled_flops=int(row[8]),
                )
            )
    return records
