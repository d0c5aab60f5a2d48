import math

import numpy as np
import pandas as pd
import pytest

from classifier import NetConfig, init_classifier, train_classifier
from datagen import (Dataset, GaussianChainConfig, apply_componentwise, load_dataset_csv, regroup,
                     sample_gaussian_chain, save_dataset_csv, true_cmi_xy_given_z)
from errors import ConfigError, TrialFailedError
from estimator import (EstimateReport, RatioModel, estimate_all, estimate_dv, estimate_ldr, estimate_nwj,
                       gamma_hat, oracle_product_batch, run_algorithm1, run_methods, run_midiff, run_oracle)
from resample import LabeledBatch, isolated_knn_batch, joint_batch

ALL = slice(None)


def constant_classifier(omega, tau=1e-3, input_dim=3):
    """Logistic regression with zero weights, so every input maps to omega."""
    clf = init_classifier(NetConfig(input_dim=input_dim, hidden=(), tau=tau))
    clf.weights[0][:] = 0.0
    clf.biases[0][:] = math.log(omega / (1.0 - omega))
    return clf


def batches(data, b=60, m=20, k=3, seed=0):
    return joint_batch(data, b, seed), isolated_knn_batch(data, m, k, seed + 1)


class TestGammaHat:
    def test_balanced_odds(self):
        model = RatioModel.learned(constant_classifier(0.5), p1=0.5)
        assert gamma_hat(model, [0.1], [0.2], [0.3]) == pytest.approx(1.0)

    def test_upper_clip(self):
        model = RatioModel.learned(constant_classifier(0.9, tau=0.1), p1=0.5)
        assert gamma_hat(model, [0.0], [0.0], [0.0]) == pytest.approx(9.0)
        assert model.bounds() == pytest.approx((1 / 9, 9.0))

    def test_prior_scales_the_odds(self):
        model = RatioModel.learned(constant_classifier(0.5), p1=2 / 3)
        assert gamma_hat(model, [0.0], [0.0], [0.0]) == pytest.approx(0.5)

    def test_vector_input(self):
        model = RatioModel.learned(constant_classifier(0.5), p1=0.5)
        values = gamma_hat(model, np.zeros((4, 1)), np.zeros((4, 1)), np.zeros((4, 1)))
        np.testing.assert_allclose(values, 1.0)

    def test_prior_is_required(self):
        with pytest.raises(ConfigError):
            RatioModel.learned(constant_classifier(0.5))

    def test_range_holds_for_every_sample(self, small_chain_data):
        clf = init_classifier(NetConfig(input_dim=9, hidden=(16,), tau=0.05, init_seed=4))
        clf.weights = [w * 50 for w in clf.weights]
        model = RatioModel.learned(clf, p1=0.3)
        values = gamma_hat(model, small_chain_data.x, small_chain_data.y, small_chain_data.z)
        lo, hi = model.bounds()
        assert values.min() >= lo * (1 - 1e-12) and values.max() <= hi * (1 + 1e-12)

    def test_trained_classifier_stays_in_range(self, small_chain_data, tiny_net):
        joint, prod = batches(small_chain_data, b=120, m=40, k=2)
        clf = train_classifier(init_classifier(tiny_net.with_input_dim(9)), joint, prod, seed=2)
        model = RatioModel.learned(clf)
        rng = np.random.default_rng(5)
        x, y, z = (rng.normal(scale=30.0, size=(100_000, 3)) for _ in range(3))
        values = gamma_hat(model, x, y, z)
        lo, hi = model.bounds()
        assert np.all(values >= lo * (1 - 1e-12))
        assert np.all(values <= hi * (1 + 1e-12))

    def test_one_dimensional_roles_are_a_batch(self):
        model = RatioModel.learned(constant_classifier(0.5), p1=0.5)
        values = gamma_hat(model, np.zeros(5), np.ones(5), np.full(5, 2.0))
        assert values.shape == (5,)
        np.testing.assert_allclose(values, 1.0)

        oracle = RatioModel.oracle(GaussianChainConfig(d=1))
        data = sample_gaussian_chain(GaussianChainConfig(d=1), 5, seed=3)
        flat = gamma_hat(oracle, data.x[:, 0], data.y[:, 0], data.z[:, 0])
        np.testing.assert_allclose(flat, gamma_hat(oracle, data.x, data.y, data.z))

    def test_ragged_one_dimensional_roles(self):
        model = RatioModel.learned(constant_classifier(0.5), p1=0.5)
        with pytest.raises(ConfigError):
            gamma_hat(model, np.zeros(5), np.zeros(4), np.zeros(5))


class TestEstimators:
    def test_unit_ratio_gives_zero(self, small_chain_data):
        joint, prod = batches(small_chain_data)
        model = RatioModel.learned(constant_classifier(0.5, input_dim=9), p1=0.5)
        assert estimate_dv(model, joint, prod) == pytest.approx(0.0, abs=1e-12)
        assert estimate_nwj(model, joint, prod) == pytest.approx(0.0, abs=1e-12)
        assert estimate_ldr(model, joint) == pytest.approx(0.0, abs=1e-12)

    def test_constant_ratio(self, small_chain_data):
        joint, prod = batches(small_chain_data)
        model = RatioModel.learned(constant_classifier(math.e / (1 + math.e), input_dim=9), p1=0.5)
        assert estimate_dv(model, joint, prod) == pytest.approx(0.0, abs=1e-12)
        assert estimate_ldr(model, joint) == pytest.approx(1.0, abs=1e-12)

    def test_dv_ignores_a_constant_factor(self, small_chain_data):
        joint, prod = batches(small_chain_data)
        clf = init_classifier(NetConfig(input_dim=9, hidden=(8,), init_seed=1))
        a = estimate_dv(RatioModel.learned(clf, p1=0.5), joint, prod)
        b = estimate_dv(RatioModel.learned(clf, p1=0.2), joint, prod)
        assert a == pytest.approx(b, abs=1e-12)

    def test_nwj_never_exceeds_dv(self, small_chain_data):
        for seed in range(5):
            joint, prod = batches(small_chain_data, seed=seed)
            clf = init_classifier(NetConfig(input_dim=9, hidden=(8,), init_seed=seed))
            clf.weights = [w * 3 for w in clf.weights]
            values = estimate_all(RatioModel.learned(clf, p1=0.4), joint, prod)
            assert values["nwj"] <= values["dv"] + 1e-9

    def test_empty_batch(self, small_chain_data):
        joint, _ = batches(small_chain_data)
        empty = LabeledBatch(np.empty((0, 3)), np.empty((0, 3)), np.empty((0, 3)), 0, "isolated_knn")
        model = RatioModel.learned(constant_classifier(0.5, input_dim=9), p1=0.5)
        with pytest.raises(ConfigError):
            estimate_dv(model, joint, empty)


class TestOracle:
    def test_one_dimensional_chain(self):
        config = GaussianChainConfig(d=1)
        report = run_oracle(config, 20000, seed=0)
        truth = true_cmi_xy_given_z(config)
        assert report.averages["ldr"] == pytest.approx(truth, abs=0.05)
        assert report.averages["dv"] == pytest.approx(truth, abs=0.2)
        assert report.averages["nwj"] == pytest.approx(truth, abs=0.2)

    def test_isolated_knn_product(self):
        report = run_oracle(GaussianChainConfig(d=1), 4000, seed=1, product="isolated_knn", k=2)
        assert report.config["product"] == "isolated_knn"
        assert report.trials.loc[0, "nwj"] <= report.trials.loc[0, "dv"] + 1e-9

    def test_unknown_product(self):
        with pytest.raises(ConfigError):
            run_oracle(GaussianChainConfig(d=1), 100, seed=0, product="shuffle")

    def test_exact_product_is_tagged_as_such(self):
        batch = oracle_product_batch(GaussianChainConfig(d=1), 50, seed=0)
        assert batch.origin == "exact_product" and batch.label == 0
        assert batch.provenance["sampler"] == "conditional_product"
        resampled = oracle_product_batch(GaussianChainConfig(d=1), 50, seed=0, product="isolated_knn")
        assert resampled.origin == "isolated_knn"
        report = run_oracle(GaussianChainConfig(d=1), 200, seed=0, T=2)
        assert list(report.trials["product_origin"]) == ["exact_product", "exact_product"]

    @pytest.mark.slow
    def test_three_dimensional_chain_at_scale(self, chain):
        report = run_oracle(chain, 100_000, seed=0)
        truth = true_cmi_xy_given_z(chain)
        for name in ("dv", "nwj", "ldr"):
            assert report.averages[name] == pytest.approx(truth, rel=0.02), name


class TestAlgorithm1:
    def test_report_shape_and_averages(self, small_chain_data, tiny_net):
        report = run_algorithm1(small_chain_data, T=2, b=100, k=2, net=tiny_net, seed=3)
        assert len(report.trials) == 2
        for name in ("dv", "nwj", "ldr"):
            assert report.averages[name] == np.mean(report.trials[name].to_numpy())
        assert (report.trials["nwj"] <= report.trials["dv"] + 1e-9).all()
        cfg = report.config
        assert (cfg["m"], cfg["b_prime"], cfg["n_train"]) == (50, 100, 200)
        assert cfg["p1"] == pytest.approx(0.5)
        assert len(report.timings) == 2

    def test_single_trial(self, small_chain_data, tiny_net):
        report = run_algorithm1(small_chain_data, T=1, b=100, k=2, net=tiny_net, seed=3)
        assert report.averages["dv"] == report.trials.loc[0, "dv"]

    def test_same_seed_same_report(self, small_chain_data, tiny_net):
        a = run_algorithm1(small_chain_data, T=2, b=100, k=2, net=tiny_net, seed=8)
        b = run_algorithm1(small_chain_data, T=2, b=100, k=2, net=tiny_net, seed=8)
        pd.testing.assert_frame_equal(a.trials, b.trials)
        assert a.to_payload() == b.to_payload()

    def test_thread_count_does_not_change_results(self, small_chain_data, tiny_net):
        a = run_algorithm1(small_chain_data, T=2, b=100, k=2, net=tiny_net, seed=8, threads=1)
        b = run_algorithm1(small_chain_data, T=2, b=100, k=2, net=tiny_net, seed=8, threads=2)
        pd.testing.assert_frame_equal(a.trials, b.trials)

    def test_infeasible_schedule(self, small_chain_data, tiny_net):
        with pytest.raises(ConfigError):
            run_algorithm1(small_chain_data, T=1, b=100, k=150, net=tiny_net, seed=0, m=100)
        with pytest.raises(ConfigError):
            run_algorithm1(small_chain_data, T=0, b=100, k=2, net=tiny_net, seed=0)

    def test_failed_trial_is_reported(self, small_chain_data, tiny_net):
        broken = Dataset(np.full_like(small_chain_data.x, np.nan), small_chain_data.y, small_chain_data.z)
        with pytest.raises(TrialFailedError) as info:
            run_algorithm1(broken, T=2, b=100, k=2, net=tiny_net, seed=0)
        assert info.value.trial == 0

    def test_csv_round_trip_gives_identical_estimates(self, small_chain_data, tiny_net, tmp_path):
        path = save_dataset_csv(small_chain_data, tmp_path / "data.csv")
        a = run_algorithm1(small_chain_data, T=1, b=100, k=2, net=tiny_net, seed=2)
        b = run_algorithm1(load_dataset_csv(path), T=1, b=100, k=2, net=tiny_net, seed=2)
        pd.testing.assert_frame_equal(a.trials, b.trials)

    def test_epoch_trace(self, small_chain_data, tiny_net):
        plain = run_algorithm1(small_chain_data, T=2, b=100, k=2, net=tiny_net, seed=6)
        tracked = run_algorithm1(small_chain_data, T=2, b=100, k=2, net=tiny_net, seed=6, track_epochs=True)
        assert plain.epoch_trace is None
        pd.testing.assert_frame_equal(plain.trials, tracked.trials)

        trace = tracked.epoch_trace
        assert len(trace) == 2 * tiny_net.epochs
        assert list(trace.loc[trace["trial"] == 1, "epoch"]) == [1, 2, 3]
        last = trace[trace["epoch"] == tiny_net.epochs].set_index("trial")
        for name in ("dv", "nwj", "ldr"):
            np.testing.assert_array_equal(last[name].to_numpy(), tracked.trials[name].to_numpy())
        np.testing.assert_array_equal(last["loss"].to_numpy(), tracked.trials["final_loss"].to_numpy())
        assert (trace["nwj"] <= trace["dv"] + 1e-9).all()

    def test_kept_classifiers(self, small_chain_data, tiny_net):
        report = run_algorithm1(small_chain_data, T=2, b=100, k=2, net=tiny_net, seed=6, keep_classifiers=True)
        assert [label for label, _ in report.classifiers] == ["trial0", "trial1"]
        for (_, clf), norm in zip(report.classifiers, report.trials["parameter_norm"]):
            assert clf.parameter_norm() == norm
            assert len(clf.loss_log) == tiny_net.epochs
        assert run_algorithm1(small_chain_data, T=1, b=100, k=2, net=tiny_net, seed=6).classifiers == []

    @pytest.mark.slow
    def test_reproduces_the_d3_setting(self, chain):
        data = sample_gaussian_chain(chain, 80_000, seed=0)
        net = NetConfig(input_dim=9, epochs=200, tau=1e-3)
        report = run_algorithm1(data, T=5, b=40_000, k=2, net=net, seed=0, threads=5)
        truth = true_cmi_xy_given_z(chain)
        assert report.averages["dv"] == pytest.approx(truth, rel=0.15)
        assert report.averages["ldr"] == pytest.approx(truth, rel=0.15)


class TestMiDiff:
    def test_difference_of_terms(self, small_chain_data, tiny_net):
        report = run_midiff(small_chain_data, T=2, b=100, net=tiny_net, seed=1)
        trials = report.trials
        np.testing.assert_allclose(trials["dv"], trials["dv_xyz"] - trials["dv_xz"])
        np.testing.assert_allclose(trials["nwj"], trials["nwj_xyz"] - trials["nwj_xz"])
        assert report.estimators == ("dv", "nwj")

    def test_constant_z(self, small_chain_data, tiny_net):
        flat = Dataset(small_chain_data.x, small_chain_data.y, np.zeros((small_chain_data.n, 1)))
        report = run_midiff(flat, T=1, b=50, net=tiny_net, seed=0)
        assert np.isfinite(report.trials[["dv", "nwj"]].to_numpy()).all()

    def test_batch_larger_than_split(self, small_chain_data, tiny_net):
        with pytest.raises(ConfigError):
            run_midiff(small_chain_data, T=1, b=300, net=tiny_net, seed=0)

    def test_kept_classifiers(self, small_chain_data, tiny_net):
        report = run_midiff(small_chain_data, T=1, b=100, net=tiny_net, seed=1, keep_classifiers=True)
        labels = dict(report.classifiers)
        assert set(labels) == {"trial0_xyz", "trial0_xz"}
        assert labels["trial0_xyz"].config.input_dim == 9
        assert labels["trial0_xz"].config.input_dim == 6
        assert report.epoch_trace is None


class TestReport:
    def test_payload_and_frame(self):
        trials = pd.DataFrame({"trial": [0, 1], "dv": [1.0, 3.0], "nwj": [0.5, 2.5], "ldr": [1.0, 2.0]})
        report = EstimateReport("isolated_knn", trials, {"n": 10})
        payload = report.to_payload()
        assert payload["averages"] == {"dv": 2.0, "nwj": 1.5, "ldr": 1.5}
        assert payload["extremes"]["dv"] == {"min": 1.0, "max": 3.0, "std": 1.0}
        assert list(report.to_frame().columns[:2]) == ["method", "trial"]

    def test_run_methods_dispatch(self, small_chain_data, tiny_net):
        reports = run_methods(small_chain_data, ["isolated_knn", "midiff"], T=1, k=2, net=tiny_net, seed=0)
        assert set(reports) == {"isolated_knn", "midiff"}
        with pytest.raises(ConfigError):
            run_methods(small_chain_data, ["ksg"], T=1, k=2, net=tiny_net, seed=0)


@pytest.mark.slow
class TestReproductions:
    """Full-size runs: n = 80000, 200 epochs."""

    def run(self, data, T, seed=0):
        net = NetConfig(input_dim=1, epochs=200, tau=1e-3)
        return run_algorithm1(data, T=T, b=data.n // 2, k=2, net=net, seed=seed, threads=T)

    def test_zero_cmi(self, chain):
        data = sample_gaussian_chain(chain, 80_000, seed=1)
        swapped = regroup(data, x=[("x", ALL)], y=[("z", ALL)], z=[("y", ALL)])
        report = self.run(swapped, T=10)
        for name in ("dv", "nwj", "ldr"):
            assert abs(report.averages[name]) <= 0.1

    def test_tanh_map_keeps_the_cmi(self):
        config = GaussianChainConfig(d=1)
        data = apply_componentwise(sample_gaussian_chain(config, 80_000, seed=2), "x", "tanh", a=0.05)
        report = self.run(data, T=5)
        assert report.averages["ldr"] == pytest.approx(1.5185, rel=0.15)

    @pytest.mark.parametrize("rho", [0.0, 0.2])
    def test_chain_rule_split(self, rho):
        config = GaussianChainConfig(d=5, rho=rho)
        data = sample_gaussian_chain(config, 80_000, seed=3)
        first = regroup(data, x=[("x", ALL)], y=[("y", slice(0, 1))], z=[("z", ALL)])
        second = regroup(data, x=[("x", ALL)], y=[("y", slice(1, None))], z=[("y", slice(0, 1)), ("z", ALL)])
        whole = self.run(data, T=5).averages["ldr"]
        part1 = self.run(first, T=5, seed=1).averages["ldr"]
        part2 = self.run(second, T=5, seed=2).averages["ldr"]
        assert abs(part1 + part2 - whole) <= 0.2 * whole
        assert part1 <= whole + 0.1
