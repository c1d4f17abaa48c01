"""Command-line interface: masks, benchmarks, FLOP reports, training, eval.

Every subcommand is deterministic given its seed flags; the only outputs
that vary between runs on the same host are measured runtime columns and
figures derived from them. Errors exit nonzero with a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from .encoder import EncoderConfig, receptive_field
from .graph import (
    a1_quadruped,
    build_mask,
    load_graph,
    mask_to_text,
    random_mask,
    zero_fraction,
)
from .training import (
    TrainConfig,
    generate_task,
    make_policy,
    matched_mlp_config,
    read_curve_csv,
    train,
    write_curve_csv,
)

__all__ = ["main", "build_parser"]

VARIANT_CHOICES = ("hard", "mix", "soft", "vanilla", "hard-random", "mlp")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _load_graph_arg(spec: str):
    if spec == "a1":
        return a1_quadruped()
    return load_graph(spec)


def _zf_grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    if step <= 0:
        raise ValueError("zf-step must be positive")
    if hi < lo:
        raise ValueError("zf-max must be >= zf-min")
    count = int(round((hi - lo) / step))
    grid = [round(lo + i * step, 12) for i in range(count + 1)]
    return tuple(zf for zf in grid if zf <= hi + 1e-12)


# ---------------------------------------------------------------- handlers


def _cmd_mask_build(args) -> None:
    g = _load_graph_arg(args.graph)
    m = build_mask(g)
    Path(args.out).write_text(mask_to_text(m))
    print(f"wrote {args.out}: n={m.n} nnz={int(m.entries.sum())} zero_fraction={zero_fraction(m)!r}")


def _cmd_mask_random(args) -> None:
    m = random_mask(args.nodes, args.zero_fraction, args.seed)
    Path(args.out).write_text(mask_to_text(m))
    print(f"wrote {args.out}: n={m.n} nnz={int(m.entries.sum())} zero_fraction={zero_fraction(m)!r}")


def _print_bench_summary(records) -> None:
    print(f"{'kernel':<8}{'n':>6}{'zero_frac':>11}{'trials':>8}{'mean_us':>12}{'stderr_us':>11}")
    for cell in bench_mod.summarize(records):
        print(
            f"{cell.kernel:<8}{cell.n:>6}{cell.zero_fraction:>11.4g}{cell.trials:>8}"
            f"{cell.mean_runtime_ns / 1e3:>12.2f}{cell.stderr_runtime_ns / 1e3:>11.2f}"
        )


def _cmd_bench_scaling(args) -> None:
    plan = bench_mod.BenchPlan(
        node_counts=args.nodes,
        zero_fractions=(args.zero_fraction,),
        trials=args.trials,
        seed=args.seed,
        d_k=args.dk,
        repeats=args.repeats,
    )
    records = bench_mod.run_scaling_bench(plan)
    bench_mod.emit_csv(records, args.out)
    _print_bench_summary(records)
    for n, ratio in bench_mod.speedup_by_n(records, args.zero_fraction).items():
        print(f"speedup dense/sparse at n={n}: {ratio:.3f}x")
    print(f"wrote {args.out} ({len(records)} records)")
    if args.figure:
        from .plotting import plot_scaling

        plot_scaling(records, args.figure)
        print(f"wrote {args.figure}")


def _cmd_bench_sparsity(args) -> None:
    grid = _zf_grid(args.zf_min, args.zf_max, args.zf_step)
    records = bench_mod.run_sparsity_sweep(
        args.nodes, grid, trials=args.trials, seed=args.seed, d_k=args.dk, repeats=args.repeats
    )
    bench_mod.emit_csv(records, args.out)
    _print_bench_summary(records)
    for n, zf in bench_mod.crossover_points(records).items():
        where = "none" if zf is None else repr(zf)
        print(f"crossover zero_fraction at n={n}: {where}")
    print(f"wrote {args.out} ({len(records)} records)")
    if args.figure:
        from .plotting import plot_sparsity

        plot_sparsity(records, args.figure)
        print(f"wrote {args.figure}")


def _cmd_flops(args) -> None:
    bench_mod.report_flops(args.nodes, args.dk, args.zero_fraction, args.c1, args.c2)


def _cmd_train(args) -> None:
    g = _load_graph_arg(args.graph)
    enc_cfg = EncoderConfig(
        variant=args.variant if args.variant != "mlp" else "hard",
        num_layers=args.layers,
        num_heads=args.heads,
        d_model=args.d_model,
        d_ff=args.d_ff,
        mask_seed=args.mask_seed if args.mask_seed is not None else args.seed,
    )
    if args.variant == "mlp":
        cfg = matched_mlp_config(g, enc_cfg)
    else:
        cfg = enc_cfg
    task = generate_task(
        g, radius=args.radius, sigma=args.sigma, n_train=args.n_train, n_val=args.n_val, seed=args.seed
    )
    policy = make_policy(g, cfg, seed=args.seed)
    n_params = sum(policy.params[k].size for k in policy.params.keys())
    print(f"variant={args.variant} layers={args.layers} params={n_params}")
    train_cfg = TrainConfig(
        optimizer=args.optimizer,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        target_val_mse=args.target_val_mse,
    )
    result = train(task, policy, train_cfg)
    write_curve_csv(args.out, result.curve)
    print(
        f"stopped_epoch={result.stopped_epoch} "
        f"train_mse={result.final_train_mse!r} val_mse={result.final_val_mse!r}"
    )
    print(f"wrote {args.out} ({len(result.curve)} epochs)")
    if args.figure:
        from .plotting import plot_curves

        plot_curves({args.variant: result.curve}, args.figure)
        print(f"wrote {args.figure}")


def _cmd_eval_receptive_field(args) -> None:
    g = _load_graph_arg(args.graph)
    if not 0 <= args.node < g.n:
        raise ValueError(f"node {args.node} out of range for a {g.n}-node graph")
    cfg = EncoderConfig(
        variant=args.variant,
        num_layers=args.layers,
        num_heads=1,
        d_model=8,
        d_ff=8,
        mask_seed=args.mask_seed,
    )
    field = receptive_field(g, cfg, args.node)
    ids = " ".join(str(i) for i in sorted(field))
    print(f"receptive field of node {args.node} ({args.variant}, L={args.layers}): {ids}")


def _cmd_plot_scaling(args) -> None:
    from .plotting import plot_scaling

    plot_scaling(bench_mod.read_csv(args.csv), args.out)
    print(f"wrote {args.out}")


def _cmd_plot_sparsity(args) -> None:
    from .plotting import plot_sparsity

    plot_sparsity(bench_mod.read_csv(args.csv), args.out)
    print(f"wrote {args.out}")


def _cmd_plot_curves(args) -> None:
    from .plotting import plot_curves

    curves = {Path(p).stem: read_curve_csv(p) for p in args.csv}
    plot_curves(curves, args.out)
    print(f"wrote {args.out}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodyattn",
        description="Body-graph masked attention: masks, kernels, benchmarks, training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    mask = sub.add_parser("mask", help="build or sample attention masks")
    mask_sub = mask.add_subparsers(dest="mask_command", required=True)
    mb = mask_sub.add_parser("build", help="body-induced mask from a graph file")
    mb.add_argument("--graph", required=True, help="graph file (YAML/JSON), or 'a1' for the builtin quadruped")
    mb.add_argument("--out", required=True)
    mb.set_defaults(func=_cmd_mask_build)
    mr = mask_sub.add_parser("random", help="random symmetric mask with unit diagonal")
    mr.add_argument("--nodes", type=int, required=True)
    mr.add_argument("--zero-fraction", type=float, required=True)
    mr.add_argument("--seed", type=int, default=0)
    mr.add_argument("--out", required=True)
    mr.set_defaults(func=_cmd_mask_random)

    bench = sub.add_parser("bench", help="time the dense and sparse kernels")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    bs = bench_sub.add_parser("scaling", help="runtime vs node count at fixed sparsity")
    bs.add_argument("--nodes", type=_int_list, default=(16, 32, 64, 128))
    bs.add_argument("--zero-fraction", type=float, default=0.908)
    bs.add_argument("--dk", type=int, default=64)
    bs.add_argument("--trials", type=int, default=100)
    bs.add_argument("--repeats", type=int, default=5)
    bs.add_argument("--seed", type=int, default=0)
    bs.add_argument("--out", required=True)
    bs.add_argument("--figure", help="also render a PNG next to the CSV")
    bs.set_defaults(func=_cmd_bench_scaling)
    bp = bench_sub.add_parser("sparsity", help="runtime vs zero fraction sweep")
    bp.add_argument("--nodes", type=_int_list, default=(16, 32, 64))
    bp.add_argument("--zf-min", type=float, default=0.0)
    bp.add_argument("--zf-max", type=float, default=0.95)
    bp.add_argument("--zf-step", type=float, default=0.05)
    bp.add_argument("--dk", type=int, default=64)
    bp.add_argument("--trials", type=int, default=50)
    bp.add_argument("--repeats", type=int, default=5)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--out", required=True)
    bp.add_argument("--figure", help="also render a PNG next to the CSV")
    bp.set_defaults(func=_cmd_bench_sparsity)

    flops = sub.add_parser("flops", help="analytical FLOP table for one setting")
    flops.add_argument("--nodes", type=int, required=True)
    flops.add_argument("--dk", type=int, required=True)
    flops.add_argument("--zero-fraction", type=float, required=True)
    flops.add_argument("--c1", type=int, default=1)
    flops.add_argument("--c2", type=int, default=1)
    flops.set_defaults(func=_cmd_flops)

    tr = sub.add_parser("train", help="train a policy on a synthetic radius-local task")
    tr.add_argument("--graph", required=True, help="graph file (YAML/JSON), or 'a1'")
    tr.add_argument("--variant", choices=VARIANT_CHOICES, required=True)
    tr.add_argument("--layers", type=int, default=3)
    tr.add_argument("--radius", type=int, default=1)
    tr.add_argument("--sigma", type=float, default=0.01)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--mask-seed", type=int, default=None, help="hard-random mask seed (defaults to --seed)")
    tr.add_argument("--heads", type=int, default=1)
    tr.add_argument("--d-model", type=int, default=16)
    tr.add_argument("--d-ff", type=int, default=32)
    tr.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    tr.add_argument("--lr", type=float, default=6e-3)
    tr.add_argument("--batch-size", type=int, default=64)
    tr.add_argument("--epochs", type=int, default=200)
    tr.add_argument("--n-train", type=int, default=1024)
    tr.add_argument("--n-val", type=int, default=512)
    tr.add_argument("--target-val-mse", type=float, default=None)
    tr.add_argument("--out", required=True)
    tr.add_argument("--figure", help="also render the loss curve as a PNG")
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="structural evaluations")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)
    rf = ev_sub.add_parser("receptive-field", help="predicted dependency set of one node")
    rf.add_argument("--graph", required=True, help="graph file (YAML/JSON), or 'a1'")
    rf.add_argument("--variant", choices=VARIANT_CHOICES[:5], default="hard")
    rf.add_argument("--layers", type=int, required=True)
    rf.add_argument("--node", type=int, required=True)
    rf.add_argument("--mask-seed", type=int, default=0)
    rf.set_defaults(func=_cmd_eval_receptive_field)

    plot = sub.add_parser("plot", help="render figures from emitted CSV files")
    plot_sub = plot.add_subparsers(dest="plot_command", required=True)
    ps = plot_sub.add_parser("scaling", help="figure from a bench scaling CSV")
    ps.add_argument("--csv", required=True)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=_cmd_plot_scaling)
    pp = plot_sub.add_parser("sparsity", help="figure from a sparsity sweep CSV")
    pp.add_argument("--csv", required=True)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=_cmd_plot_sparsity)
    pc = plot_sub.add_parser("curves", help="figure from one or more loss-curve CSVs")
    pc.add_argument("--csv", action="append", required=True, help="repeatable")
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=_cmd_plot_curves)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # CLI boundary: one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
