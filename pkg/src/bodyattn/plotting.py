"""Render benchmark and training results to figure files.

Each function takes already-parsed data (bench records or loss curves),
draws one figure, writes it to ``path``, and returns the path. The Agg
backend is forced so rendering works headless.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .bench import BenchRecord, crossover_points, speedup_by_n, summarize

__all__ = ["plot_scaling", "plot_sparsity", "plot_curves"]


def plot_scaling(records: Iterable[BenchRecord], path: str) -> str:
    """Runtime vs node count per kernel, plus the dense/sparse speedup ratio."""
    records = list(records)
    stats = summarize(records)
    zfs = sorted({c.zero_fraction for c in stats})
    fig, (ax_rt, ax_ratio) = plt.subplots(1, 2, figsize=(9.0, 3.6))

    for zf in zfs:
        for kernel, marker in (("dense", "o"), ("sparse", "s")):
            cells = [c for c in stats if c.kernel == kernel and c.zero_fraction == zf]
            if not cells:
                continue
            label = kernel if len(zfs) == 1 else f"{kernel} zf={zf:g}"
            ax_rt.errorbar(
                [c.n for c in cells],
                [c.mean_runtime_ns / 1e3 for c in cells],
                yerr=[c.stderr_runtime_ns / 1e3 for c in cells],
                marker=marker,
                capsize=3,
                label=label,
            )
        ratios = speedup_by_n(records, zf)
        if ratios:
            label = "dense/sparse" if len(zfs) == 1 else f"zf={zf:g}"
            ax_ratio.plot(list(ratios), list(ratios.values()), marker="o", label=label)

    ax_rt.set_xscale("log", base=2)
    ax_rt.set_yscale("log")
    ax_rt.set_xlabel("nodes n")
    ax_rt.set_ylabel("runtime (us)")
    ax_rt.legend()
    ax_ratio.axhline(1.0, color="gray", linewidth=0.8)
    ax_ratio.set_xscale("log", base=2)
    ax_ratio.set_xlabel("nodes n")
    ax_ratio.set_ylabel("mean runtime ratio")
    ax_ratio.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_sparsity(records: Iterable[BenchRecord], path: str) -> str:
    """Runtime vs mask zero fraction, one pair of lines per node count."""
    records = list(records)
    stats = summarize(records)
    crossings = crossover_points(records)
    fig, ax = plt.subplots(figsize=(5.4, 3.8))

    for n in sorted({c.n for c in stats}):
        for kernel, style in (("dense", "--"), ("sparse", "-")):
            cells = sorted(
                (c for c in stats if c.kernel == kernel and c.n == n),
                key=lambda c: c.zero_fraction,
            )
            if not cells:
                continue
            ax.plot(
                [c.zero_fraction for c in cells],
                [c.mean_runtime_ns / 1e3 for c in cells],
                style,
                marker=".",
                label=f"{kernel} n={n}",
            )
        if crossings.get(n) is not None:
            ax.axvline(crossings[n], color="gray", linewidth=0.8, linestyle=":")

    ax.set_xlabel("mask zero fraction")
    ax.set_ylabel("runtime (us)")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_curves(
    curves: dict[str, Sequence[tuple[int, float, float]]], path: str
) -> str:
    """Training and validation MSE per epoch, one color per labeled run."""
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    for label, rows in curves.items():
        epochs = [r[0] for r in rows]
        (line,) = ax.plot(epochs, [r[2] for r in rows], "-", label=f"{label} val")
        ax.plot(
            epochs,
            [r[1] for r in rows],
            "--",
            color=line.get_color(),
            alpha=0.6,
            label=f"{label} train",
        )
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
