"""Tests for the kernel timing harness and its CSV schema."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyattn import bench
from bodyattn.flops import FlopsModel, masked_flops, masked_flops_from_nnz, vanilla_flops
from bodyattn.graph import random_mask

record_strategy = st.builds(
    lambda kernel, n, d_k, zf, trial, rt, pre, flops: bench.BenchRecord(
        kernel=kernel,
        n=n,
        d_k=d_k,
        zero_fraction=zf,
        trial=trial,
        runtime_ns=rt,
        preprocess_ns=pre,
        counted_flops=flops,
        modeled_flops=flops,
    ),
    st.sampled_from(["dense", "sparse"]),
    st.integers(1, 4096),
    st.integers(1, 512),
    st.floats(0.0, 0.999),
    st.integers(0, 10_000),
    st.integers(1, 10**12),
    st.integers(0, 10**9),
    st.integers(0, 10**15),
)


def make_record(**overrides):
    base = dict(
        kernel="dense",
        n=16,
        d_k=64,
        zero_fraction=0.5,
        trial=0,
        runtime_ns=1000,
        preprocess_ns=50,
        counted_flops=123,
        modeled_flops=123,
    )
    base.update(overrides)
    return bench.BenchRecord(**base)


class TestRecordValidation:
    def test_accepts_consistent_record(self):
        rec = make_record()
        assert rec.kernel == "dense"

    @pytest.mark.parametrize(
        "overrides",
        [
            {"kernel": "fast"},
            {"runtime_ns": 0},
            {"runtime_ns": -5},
            {"preprocess_ns": -1},
            {"counted_flops": 124},
        ],
    )
    def test_rejects_bad_fields(self, overrides):
        with pytest.raises(ValueError):
            make_record(**overrides)


class TestPlanValidation:
    def test_accepts_basic_plan(self):
        plan = bench.BenchPlan((16, 32), (0.0, 0.5), trials=3, seed=0)
        assert plan.d_k == 64

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(node_counts=(), zero_fractions=(0.5,), trials=1, seed=0),
            dict(node_counts=(16,), zero_fractions=(), trials=1, seed=0),
            dict(node_counts=(16,), zero_fractions=(0.5,), trials=0, seed=0),
            dict(node_counts=(4,), zero_fractions=(0.9,), trials=1, seed=0),
            dict(node_counts=(16,), zero_fractions=(-0.1,), trials=1, seed=0),
            dict(node_counts=(16,), zero_fractions=(0.5,), trials=1, seed=0, d_k=0),
            dict(node_counts=(16,), zero_fractions=(0.5,), trials=1, seed=0, repeats=0),
        ],
    )
    def test_rejects_bad_plans(self, kwargs):
        with pytest.raises(ValueError):
            bench.BenchPlan(**kwargs)


class TestScalingBench:
    def test_record_count_and_grouping(self):
        plan = bench.BenchPlan((8, 12), (0.25,), trials=3, seed=1, d_k=8, repeats=2)
        recs = bench.run_scaling_bench(plan)
        assert len(recs) == 2 * 2 * 3
        assert {r.kernel for r in recs} == {"dense", "sparse"}
        assert {r.n for r in recs} == {8, 12}
        assert all(r.d_k == 8 for r in recs)

    def test_counted_columns_deterministic_across_runs(self):
        plan = bench.BenchPlan((8,), (0.5,), trials=2, seed=7, d_k=4, repeats=1)
        first = bench.run_scaling_bench(plan)
        second = bench.run_scaling_bench(plan)
        key = lambda r: (r.kernel, r.trial)
        for a, b in zip(sorted(first, key=key), sorted(second, key=key)):
            assert a.counted_flops == b.counted_flops
            assert a.modeled_flops == b.modeled_flops
            assert a.zero_fraction == b.zero_fraction

    def test_counted_matches_flops_module(self):
        n, d_k, zf = 12, 8, 0.5
        plan = bench.BenchPlan((n,), (zf,), trials=1, seed=3, d_k=d_k, repeats=1)
        recs = bench.run_scaling_bench(plan)
        nnz = int(np.count_nonzero(random_mask(n, zf, 3 ^ 0).entries))
        dense = next(r for r in recs if r.kernel == "dense")
        sparse = next(r for r in recs if r.kernel == "sparse")
        assert dense.counted_flops == vanilla_flops(FlopsModel(n, d_k)).total
        assert sparse.counted_flops == masked_flops_from_nnz(n, d_k, nnz).total

    def test_zero_fraction_zero_runs(self):
        # All-ones masks: nothing to skip, sparse pays the same mandatory work.
        plan = bench.BenchPlan((8,), (0.0,), trials=1, seed=0, d_k=4, repeats=1)
        recs = bench.run_scaling_bench(plan)
        dense = next(r for r in recs if r.kernel == "dense")
        sparse = next(r for r in recs if r.kernel == "sparse")
        assert sparse.counted_flops == dense.counted_flops


class TestSummaries:
    def records_for(self, kernel, n, runtimes, zf=0.5):
        return [
            make_record(kernel=kernel, n=n, zero_fraction=zf, trial=i, runtime_ns=rt)
            for i, rt in enumerate(runtimes)
        ]

    def test_summarize_mean_and_stderr(self):
        recs = self.records_for("dense", 16, [100, 200, 300])
        (cell,) = bench.summarize(recs)
        assert cell.mean_runtime_ns == pytest.approx(200.0)
        assert cell.stderr_runtime_ns == pytest.approx(100.0 / np.sqrt(3))
        assert cell.trials == 3

    def test_summarize_single_trial_stderr_zero(self):
        (cell,) = bench.summarize(self.records_for("sparse", 8, [500]))
        assert cell.stderr_runtime_ns == 0.0

    def test_speedup_by_n(self):
        recs = self.records_for("dense", 16, [400, 600]) + self.records_for(
            "sparse", 16, [200, 300]
        )
        recs += self.records_for("dense", 32, [1000]) + self.records_for("sparse", 32, [400])
        ratios = bench.speedup_by_n(recs, 0.5)
        assert ratios == {16: pytest.approx(2.0), 32: pytest.approx(2.5)}

    def test_speedup_ignores_other_zero_fractions(self):
        recs = self.records_for("dense", 16, [400], zf=0.25) + self.records_for(
            "sparse", 16, [100], zf=0.25
        )
        assert bench.speedup_by_n(recs, 0.5) == {}

    def test_crossover_points(self):
        recs = []
        # At zf=0.2 sparse loses, at 0.4 it ties, at 0.6 it wins.
        for zf, sparse_rt in [(0.2, 900), (0.4, 800), (0.6, 700)]:
            recs += self.records_for("dense", 16, [800], zf=zf)
            recs += self.records_for("sparse", 16, [sparse_rt], zf=zf)
        assert bench.crossover_points(recs) == {16: 0.6}

    def test_crossover_none_when_sparse_never_wins(self):
        recs = self.records_for("dense", 8, [100], zf=0.5) + self.records_for(
            "sparse", 8, [200], zf=0.5
        )
        assert bench.crossover_points(recs) == {8: None}


class TestReportFlops:
    def test_report_contains_both_conventions_and_ratio(self):
        buf = io.StringIO()
        bench.report_flops(128, 64, 0.908, out=buf)
        text = buf.getvalue()
        assert "zeta" in text and "eta" in text
        model = FlopsModel(128, 64, density=1.0 - 0.908)
        want = vanilla_flops(model).total / masked_flops(model).total
        assert f"{want:.4f}" in text

    def test_report_dense_mask_ratio_one(self):
        buf = io.StringIO()
        bench.report_flops(32, 16, 0.0, out=buf)
        assert "ratio vanilla/masked at n=32: 1.0000" in buf.getvalue()

    @pytest.mark.parametrize("zf", [-0.1, 1.0, 1.5])
    def test_report_rejects_bad_zero_fraction(self, zf):
        with pytest.raises(ValueError):
            bench.report_flops(16, 8, zf, out=io.StringIO())


class TestCsvRoundTrip:
    def test_empty_records_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        bench.emit_csv([], str(path))
        assert path.read_bytes() == (",".join(bench.CSV_COLUMNS) + "\n").encode()
        assert bench.read_csv(str(path)) == []

    def test_round_trip_exact(self, tmp_path):
        recs = [
            make_record(trial=0, zero_fraction=0.908),
            make_record(kernel="sparse", trial=1, zero_fraction=1 / 3, runtime_ns=77),
        ]
        path = tmp_path / "r.csv"
        bench.emit_csv(recs, str(path))
        assert bench.read_csv(str(path)) == recs

    def test_append_keeps_single_header(self, tmp_path):
        path = tmp_path / "a.csv"
        bench.emit_csv([make_record(trial=0)], str(path))
        bench.emit_csv([make_record(trial=1)], str(path), append=True)
        text = path.read_text()
        assert text.count("kernel,n,d_k") == 1
        assert len(bench.read_csv(str(path))) == 2

    def test_append_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("wrong,header\n1,2\n")
        with pytest.raises(ValueError):
            bench.emit_csv([make_record()], str(path), append=True)

    def test_read_rejects_missing_header(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("dense,16,64,0.5,0,1000,50,123,123\n")
        with pytest.raises(ValueError):
            bench.read_csv(str(path))

    def test_read_rejects_short_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(",".join(bench.CSV_COLUMNS) + "\ndense,16,64\n")
        with pytest.raises(ValueError):
            bench.read_csv(str(path))

    @given(st.lists(record_strategy, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, tmp_path_factory, recs):
        path = tmp_path_factory.mktemp("csv") / "prop.csv"
        bench.emit_csv(recs, str(path))
        assert bench.read_csv(str(path)) == recs
