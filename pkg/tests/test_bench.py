import pandas as pd
import pytest

from bench import BenchSpec, compare_columns, mann_whitney, run_sweep
from datagen import GaussianChainConfig, chain_truth
from errors import ConfigError


class TestMannWhitney:
    def test_separated_samples(self):
        result = mann_whitney([1.0, 2.0, 3.0], [10.0, 11.0, 12.0])
        assert result["U"] == 0.0
        assert result["method"] == "exact"
        assert result["p_value"] == pytest.approx(0.1)
        assert (result["n1"], result["n2"]) == (3, 3)

    def test_identical_samples(self):
        result = mann_whitney([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert result["method"] == "asymptotic"
        assert result["U"] == pytest.approx(4.5)
        assert result["p_value"] > 0.5

    def test_large_samples_use_the_normal_approximation(self):
        result = mann_whitney(range(25), [x + 0.5 for x in range(25)])
        assert result["method"] == "asymptotic"

    def test_empty_sample(self):
        with pytest.raises(ConfigError):
            mann_whitney([], [1.0])


class TestBenchSpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            BenchSpec(axis="tau", values=(1,))
        with pytest.raises(ConfigError):
            BenchSpec(axis="n", values=())
        with pytest.raises(ConfigError):
            BenchSpec(axis="n", values=(100,), methods=("ksg",))

    def test_cells_follow_the_axis(self):
        spec = BenchSpec(axis="ratio", values=(4000, 16000), n=8000, k=2)
        cells = spec.cells()
        assert [(c["n"], c["k"]) for c in cells] == [(4000, 1), (16000, 4)]
        assert cells[0]["seed"] != cells[1]["seed"]
        d_cells = BenchSpec(axis="d", values=[1, 5]).cells()
        assert [c["d"] for c in d_cells] == [1, 5]
        assert all(c["n"] == 8000 and c["k"] == 2 for c in d_cells)

    def test_cell_seeds_depend_on_master_seed(self):
        a = BenchSpec(axis="n", values=(100, 200), seed=1).cells()
        b = BenchSpec(axis="n", values=(100, 200), seed=2).cells()
        assert [c["seed"] for c in a] != [c["seed"] for c in b]


class TestSweep:
    def test_failed_cell_does_not_stop_the_sweep(self, tiny_net):
        spec = BenchSpec(axis="k", values=(2, 10_000), n=400, T=1, net=tiny_net)
        result = run_sweep(spec)
        assert result.failed
        status = result.cells.set_index("cell")["status"]
        assert status[0] == "ok" and status[1] == "failed"
        assert "k=10000" in result.cells.set_index("cell").loc[1, "error"]
        assert len(result.frame) == 3
        assert set(result.frame["estimator"]) == {"dv", "nwj", "ldr"}
        assert (result.frame["truth"] == chain_truth(GaussianChainConfig())).all()

        summary = result.summary()
        assert len(summary) == 3
        assert {"mean", "std", "min", "max", "truth"} <= set(summary.columns)

    def test_every_cell_failing_gives_an_empty_summary(self, tiny_net):
        spec = BenchSpec(axis="k", values=(10_000,), n=400, T=1, net=tiny_net)
        result = run_sweep(spec)
        assert result.frame.empty
        assert result.summary().empty


class TestCompare:
    def test_per_cell_comparison(self):
        rows = []
        for cell in (0, 1):
            for trial in range(3):
                rows.append({"cell": cell, "method": "isolated_knn", "estimator": "dv", "estimate": 4.0 + trial})
                rows.append({"cell": cell, "method": "midiff", "estimator": "dv", "estimate": 1.0 + trial / 10})
        df = compare_columns(pd.DataFrame(rows), "isolated_knn:dv", "midiff:dv")
        assert list(df["cell"]) == [0, 1]
        assert (df["U"] == 9.0).all()
        assert df["p_value"].iloc[0] == pytest.approx(0.1)

    def test_missing_column_skips_the_cell(self):
        frame = pd.DataFrame([{"cell": 0, "method": "isolated_knn", "estimator": "dv", "estimate": 1.0}])
        assert compare_columns(frame, "isolated_knn:dv", "midiff:dv").empty
