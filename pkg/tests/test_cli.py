import json

import numpy as np
import pandas as pd
import pytest

import cli
from classifier import load_checkpoint
from datagen import GaussianChainConfig, sample_gaussian_chain, save_dataset_csv
from errors import ConfigError

TINY = ["--n", "400", "--trials", "1", "--epochs", "2", "--hidden", "8", "--seed", "0"]


def run(tmp_path, command, *args):
    return cli.main([command, *TINY, *args, "--out-dir", str(tmp_path)])


class TestConfigResolution:
    def test_preset_fills_chain(self):
        cfg = cli.resolve_config({"command": "synth", "preset": "tanh"})
        assert cfg.d == 1 and cfg.tanh_a == 0.05
        assert cfg.chain() == GaussianChainConfig(10.0, 1.0, 5.0, 1)

    def test_file_beats_preset_and_flags_beat_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("CONFIG_VERSION=1\nPRESET=dim\nTAU=0.01\nEPOCHS=7\nD=5\n")
        cfg = cli.resolve_config({"command": "synth", "config": str(path), "epochs": 3})
        assert cfg.preset == "dim" and cfg.sigma_y == 3.0
        assert cfg.tau == 0.01 and cfg.d == 5
        assert cfg.epochs == 3

    def test_bad_files(self, tmp_path):
        for name, text in [("version.env", "CONFIG_VERSION=2\n"), ("unknown.env", "FOO=1\n"),
                           ("typed.env", "EPOCHS=many\n")]:
            path = tmp_path / name
            path.write_text(text)
            with pytest.raises(ConfigError):
                cli.resolve_config({"command": "synth", "config": str(path)})
        with pytest.raises(ConfigError):
            cli.resolve_config({"command": "synth", "config": str(tmp_path / "absent.env")})

    def test_validation(self):
        with pytest.raises(ConfigError):
            cli.resolve_config({"command": "synth", "estimators": "dv,ksg"})
        with pytest.raises(ConfigError):
            cli.resolve_config({"command": "synth", "preset": "dpi", "d1": 5})

    def test_methods_follow_estimators(self):
        cfg = cli.resolve_config({"command": "synth", "estimators": "ldr,midiff"})
        assert cfg.methods == ["isolated_knn", "midiff"]
        assert cli.resolve_config({"command": "synth", "estimators": "midiff"}).methods == ["midiff"]

    def test_theory_schedule(self):
        cfg = cli.resolve_config({"command": "synth", "schedule": "theory"})
        assert cli.resolve_schedule(cfg, 20_000) == (252, 252, 10_000)

    def test_parser_destinations(self):
        args = vars(cli.build_parser().parse_args(["synth", "--lr", "0.01", "--out-dir", "x", "--preset", "zero",
                                                       "--track-epochs"]))
        assert args == {"command": "synth", "learning_rate": 0.01, "out_dir": "x", "preset": "zero",
                        "track_epochs": True}


class TestSynth:
    def test_writes_reports_and_summary(self, tmp_path, capsys):
        assert run(tmp_path, "synth") == 0
        out = tmp_path / "synth_d3"
        for name in ("target0_isolated_knn_report.json", "target0_isolated_knn_trials.csv",
                     "target0_isolated_knn_timings.json", "summary.csv"):
            assert (out / name).exists()
        summary = pd.read_csv(out / "summary.csv")
        assert set(summary["estimator"]) == {"dv", "nwj", "ldr"}
        assert summary["truth"].iloc[0] == pytest.approx(4.5554, abs=1e-4)
        payload = json.loads((out / "target0_isolated_knn_report.json").read_text())
        assert payload["run_config"]["config_version"] == 1
        assert payload["config"]["k"] == 2 and payload["config"]["b"] == 200
        assert "I(X;Y|Z)" in capsys.readouterr().out

    def test_rerun_with_more_threads_is_byte_identical(self, tmp_path):
        assert run(tmp_path, "synth", "--trials", "2") == 0
        out = tmp_path / "synth_d3"
        first = {name: (out / name).read_bytes() for name in
                 ("target0_isolated_knn_report.json", "target0_isolated_knn_trials.csv", "summary.csv")}
        assert run(tmp_path, "synth", "--threads", "2", "--trials", "2") == 0
        timings = json.loads((out / "target0_isolated_knn_timings.json").read_text())
        assert timings["threads"] == 2 and len(timings["trials"]) == 2
        for name, content in first.items():
            assert (out / name).read_bytes() == content

    def test_epoch_trace_and_checkpoints(self, tmp_path):
        assert run(tmp_path, "synth", "--track-epochs", "--checkpoints") == 0
        out = tmp_path / "synth_d3"
        trace = pd.read_csv(out / "target0_isolated_knn_epochs.csv")
        assert list(trace["epoch"]) == [1, 2]
        assert {"dv", "nwj", "ldr", "loss"} <= set(trace.columns)
        trials = pd.read_csv(out / "target0_isolated_knn_trials.csv")
        assert trace["dv"].iloc[-1] == pytest.approx(trials["dv"].iloc[0])
        clf = load_checkpoint(out / "target0_isolated_knn_checkpoints" / "trial0.json")
        assert clf.config.hidden == (8,)
        assert len(clf.loss_log) == 2

    def test_zero_preset(self, tmp_path):
        assert run(tmp_path, "synth", "--preset", "zero") == 0
        summary = pd.read_csv(tmp_path / "synth_zero" / "summary.csv")
        assert (summary["truth"] == 0.0).all()

    def test_dpi_preset_adds_the_parts(self, tmp_path):
        assert run(tmp_path, "synth", "--preset", "dpi", "--estimators", "ldr") == 0
        summary = pd.read_csv(tmp_path / "synth_dpi" / "summary.csv")
        parts = summary[summary["target"].isin(["I(X;Y1|Z)", "I(X;Y2|Y1,Z)"])]
        total = summary[summary["target"] == "I(X;Y1|Z)+I(X;Y2|Y1,Z)"]
        assert len(total) == 1
        assert total["average"].iloc[0] == pytest.approx(parts["average"].sum())
        assert total["truth"].iloc[0] == pytest.approx(7.5923, abs=1e-4)

    def test_midiff_rows(self, tmp_path):
        assert run(tmp_path, "synth", "--estimators", "dv,midiff") == 0
        summary = pd.read_csv(tmp_path / "synth_d3" / "summary.csv")
        pairs = set(zip(summary["method"], summary["estimator"]))
        assert pairs == {("isolated_knn", "dv"), ("midiff", "dv"), ("midiff", "nwj")}

    def test_diagnostics_table(self, tmp_path):
        assert run(tmp_path, "synth", "--diagnostics") == 0
        table = pd.read_csv(tmp_path / "synth_d3" / "target0_diagnostics.csv")
        assert set(table["delta"]) == {f"delta{i}" for i in range(1, 8)}
        assert (table["probability_bound"].dropna() <= 1.0).all()

    def test_infeasible_schedule_writes_nothing(self, tmp_path, capsys):
        assert run(tmp_path, "synth", "--m", "100", "--k", "150") == 1
        assert not (tmp_path / "synth_d3").exists()
        assert "k=150" in capsys.readouterr().err


class TestEstimate:
    @pytest.fixture
    def data_csv(self, tmp_path):
        data = sample_gaussian_chain(GaussianChainConfig(), 400, seed=1)
        return save_dataset_csv(data, tmp_path / "data.csv")

    def test_estimate_from_csv(self, tmp_path, data_csv):
        assert run(tmp_path, "estimate", "--data", str(data_csv), "--dims", "3,3,3", "--diagnostics") == 0
        out = tmp_path / "estimate_data"
        assert (out / "isolated_knn_report.json").exists()
        assert (out / "diagnostics.csv").exists()
        summary = pd.read_csv(out / "summary.csv")
        assert "truth" not in summary.columns and len(summary) == 3

    def test_missing_column(self, tmp_path, data_csv):
        assert run(tmp_path, "estimate", "--data", str(data_csv), "--dims", "3,3,4") == 1
        assert not (tmp_path / "estimate_data").exists()

    def test_needs_data(self, tmp_path):
        assert run(tmp_path, "estimate") == 1


class TestDigraph:
    def test_graph_artifacts(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "series.csv"
        pd.DataFrame(rng.normal(size=(300, 3)), columns=["a", "b", "c"]).to_csv(path, index=False)
        assert run(tmp_path, "digraph", "--series", str(path), "--nodes", "a,b,c", "--lag", "2") == 0
        payload = json.loads((tmp_path / "digraph_series" / "graph.json").read_text())
        assert payload["nodes"] == ["a", "b", "c"]
        assert set(payload["adjacency"]["a"]) == {"b", "c"}
        assert payload["metadata"]["l"] == 2
        frame = pd.read_csv(tmp_path / "digraph_series" / "graph.csv")
        assert list(frame.columns) == ["source", "a", "b", "c"]

    def test_unknown_node(self, tmp_path):
        path = tmp_path / "series.csv"
        pd.DataFrame({"a": [1.0, 2.0], "b": [3.0, 4.0]}).to_csv(path, index=False)
        assert run(tmp_path, "digraph", "--series", str(path), "--nodes", "a,b,c") == 1


class TestBench:
    def test_sweep_with_comparison(self, tmp_path):
        code = cli.main(["bench", "--axis", "n", "--values", "400,600", "--n", "400", "--trials", "2",
                         "--epochs", "2", "--hidden", "8", "--estimators", "dv,midiff",
                         "--compare", "isolated_knn:dv,midiff:dv", "--out-dir", str(tmp_path)])
        assert code == 0
        out = tmp_path / "bench_n"
        for name in ("sweep.csv", "cells.csv", "summary.csv", "run_config.json", "mann_whitney.csv"):
            assert (out / name).exists()
        sweep = pd.read_csv(out / "sweep.csv")
        assert set(sweep["n"]) == {400, 600}
        assert set(zip(sweep["method"], sweep["estimator"])) >= {("isolated_knn", "dv"), ("midiff", "dv")}
        mw = pd.read_csv(out / "mann_whitney.csv")
        assert len(mw) == 2 and (mw["n1"] == 2).all()

    def test_failed_cell_sets_exit_code(self, tmp_path):
        code = cli.main(["bench", "--axis", "k", "--values", "2,5000", "--n", "400", "--trials", "1",
                         "--epochs", "1", "--hidden", "4", "--out-dir", str(tmp_path)])
        assert code == 1
        cells = pd.read_csv(tmp_path / "bench_k" / "cells.csv")
        assert list(cells["status"]) == ["ok", "failed"]
