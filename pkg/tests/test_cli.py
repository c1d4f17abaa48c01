"""End-to-end tests for the command-line interface (run in-process)."""

import numpy as np
import pytest

from bodyattn.bench import read_csv
from bodyattn.cli import main
from bodyattn.graph import a1_quadruped, build_mask, mask_from_text, mask_to_text
from bodyattn.training import read_curve_csv

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture
def chain_yaml(tmp_path):
    lines = ["nodes:"]
    for i in range(5):
        root = ", root: true" if i == 0 else ""
        lines.append(f"  - {{name: seg{i}, obs_dim: 1, action_dim: 1{root}}}")
    lines.append("edges:")
    for i in range(4):
        lines.append(f"  - [{i}, {i + 1}]")
    path = tmp_path / "chain5.yaml"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestMaskCommands:
    def test_mask_build_matches_library(self, tmp_path, capsys):
        out = tmp_path / "mask.txt"
        assert main(["mask", "build", "--graph", "a1", "--out", str(out)]) == 0
        assert out.read_text() == mask_to_text(build_mask(a1_quadruped()))
        assert "nnz=37" in capsys.readouterr().out

    def test_mask_random_deterministic(self, tmp_path):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        argv = ["mask", "random", "--nodes", "12", "--zero-fraction", "0.4", "--seed", "7"]
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        m = mask_from_text(a.read_text())
        assert m.n == 12

    def test_mask_build_missing_graph_fails(self, tmp_path, capsys):
        rc = main(["mask", "build", "--graph", "nope.yaml", "--out", str(tmp_path / "m.txt")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")


class TestBenchCommands:
    def test_scaling_writes_csv_and_summary(self, tmp_path, capsys):
        out = tmp_path / "scale.csv"
        rc = main(
            [
                "bench", "scaling", "--nodes", "8,16", "--zero-fraction", "0.5",
                "--dk", "8", "--trials", "2", "--repeats", "1", "--out", str(out),
            ]
        )
        assert rc == 0
        records = read_csv(str(out))
        assert len(records) == 2 * 2 * 2
        text = capsys.readouterr().out
        assert "speedup dense/sparse at n=16" in text

    def test_scaling_infeasible_sparsity_fails(self, tmp_path, capsys):
        rc = main(
            ["bench", "scaling", "--nodes", "8", "--out", str(tmp_path / "x.csv")]
        )
        assert rc == 1
        assert "zero_fraction" in capsys.readouterr().err

    def test_sparsity_sweep_skips_infeasible_cells(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        rc = main(
            [
                "bench", "sparsity", "--nodes", "4,8", "--zf-min", "0", "--zf-max", "0.8",
                "--zf-step", "0.4", "--dk", "4", "--trials", "1", "--repeats", "1",
                "--out", str(out),
            ]
        )
        assert rc == 0
        records = read_csv(str(out))
        # n=4 allows zf in {0, 0.4} only; n=8 allows {0, 0.4, 0.8}.
        assert {(r.n, r.zero_fraction) for r in records} == {
            (4, 0.0), (4, 0.4), (8, 0.0), (8, 0.4), (8, 0.8),
        }
        assert "crossover zero_fraction at n=8" in capsys.readouterr().out


class TestFlopsCommand:
    def test_flops_prints_table(self, capsys):
        rc = main(["flops", "--nodes", "128", "--dk", "64", "--zero-fraction", "0.908"])
        assert rc == 0
        text = capsys.readouterr().out
        assert "zeta" in text and "eta" in text
        assert "2097153" in text  # vanilla qk at n=128, d_k=64, c1=1
        assert "asymptotic ratio" in text

    def test_flops_rejects_bad_zero_fraction(self, capsys):
        assert main(["flops", "--nodes", "16", "--dk", "8", "--zero-fraction", "1.2"]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestTrainCommand:
    BASE = [
        "--layers", "2", "--radius", "1", "--seed", "3", "--heads", "1",
        "--d-model", "8", "--d-ff", "16", "--epochs", "2",
        "--n-train", "32", "--n-val", "16", "--batch-size", "8",
    ]

    def test_train_writes_curve(self, chain_yaml, tmp_path, capsys):
        out = tmp_path / "curve.csv"
        rc = main(["train", "--graph", chain_yaml, "--variant", "hard", *self.BASE, "--out", str(out)])
        assert rc == 0
        curve = read_curve_csv(str(out))
        assert [row[0] for row in curve] == [1, 2]
        text = capsys.readouterr().out
        assert "params=" in text and "val_mse=" in text

    def test_train_byte_identical_across_runs(self, chain_yaml, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        argv = ["train", "--graph", chain_yaml, "--variant", "mix", *self.BASE]
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize("variant", ["vanilla", "soft", "hard-random", "mlp"])
    def test_all_variants_run(self, chain_yaml, tmp_path, variant):
        out = tmp_path / f"{variant}.csv"
        rc = main(["train", "--graph", chain_yaml, "--variant", variant, *self.BASE, "--out", str(out)])
        assert rc == 0
        assert len(read_curve_csv(str(out))) == 2

    def test_target_val_mse_stops_early(self, chain_yaml, tmp_path):
        out = tmp_path / "c.csv"
        argv = [
            "train", "--graph", chain_yaml, "--variant", "hard", *self.BASE,
            "--epochs", "50", "--target-val-mse", "1e9", "--out", str(out),
        ]
        assert main(argv) == 0
        assert len(read_curve_csv(str(out))) == 1


class TestEvalCommand:
    def test_receptive_field_hard_layer1(self, capsys):
        rc = main(["eval", "receptive-field", "--graph", "a1", "--variant", "hard",
                   "--layers", "1", "--node", "3"])
        assert rc == 0
        out = capsys.readouterr().out
        # calf node: itself plus its thigh neighbor
        assert out.strip().endswith(": 2 3")

    def test_receptive_field_vanilla_is_global(self, capsys):
        rc = main(["eval", "receptive-field", "--graph", "a1", "--variant", "vanilla",
                   "--layers", "1", "--node", "3"])
        assert rc == 0
        ids = capsys.readouterr().out.strip().split(": ")[1].split()
        assert len(ids) == 13

    def test_node_out_of_range_fails(self, capsys):
        rc = main(["eval", "receptive-field", "--graph", "a1", "--layers", "1", "--node", "44"])
        assert rc == 1
        assert "out of range" in capsys.readouterr().err

    def test_unknown_variant_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            main(["eval", "receptive-field", "--graph", "a1", "--variant", "mlp",
                  "--layers", "1", "--node", "0"])


class TestPlotCommands:
    def test_plot_scaling_from_csv(self, tmp_path):
        csv_path = tmp_path / "scale.csv"
        main(["bench", "scaling", "--nodes", "8,16", "--zero-fraction", "0.5",
              "--dk", "4", "--trials", "1", "--repeats", "1", "--out", str(csv_path)])
        out = tmp_path / "fig.png"
        assert main(["plot", "scaling", "--csv", str(csv_path), "--out", str(out)]) == 0
        assert out.read_bytes()[:8] == PNG_MAGIC

    def test_plot_curves_multiple_csvs(self, chain_yaml, tmp_path):
        curves = []
        for variant in ("hard", "vanilla"):
            path = tmp_path / f"{variant}.csv"
            main(["train", "--graph", chain_yaml, "--variant", variant,
                  *TestTrainCommand.BASE, "--out", str(path)])
            curves.append(str(path))
        out = tmp_path / "cmp.png"
        rc = main(["plot", "curves", "--csv", curves[0], "--csv", curves[1], "--out", str(out)])
        assert rc == 0
        assert out.read_bytes()[:8] == PNG_MAGIC

    def test_plot_missing_csv_fails(self, tmp_path, capsys):
        rc = main(["plot", "sparsity", "--csv", "missing.csv", "--out", str(tmp_path / "x.png")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_figure_flag_renders_alongside_csv(self, tmp_path):
        csv_path = tmp_path / "s.csv"
        fig_path = tmp_path / "s.png"
        rc = main(["bench", "sparsity", "--nodes", "8", "--zf-max", "0.5", "--zf-step", "0.25",
                   "--dk", "4", "--trials", "1", "--repeats", "1",
                   "--out", str(csv_path), "--figure", str(fig_path)])
        assert rc == 0
        assert csv_path.exists() and fig_path.read_bytes()[:8] == PNG_MAGIC


class TestParser:
    def test_bad_node_list_exits_with_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["bench", "scaling", "--nodes", "16,x", "--out", "o.csv"])
        assert exc.value.code == 2

    def test_missing_subcommand_exits(self):
        with pytest.raises(SystemExit):
            main([])
