import csv
import math

import numpy as np
import pytest

from conftest import random_params
from dropgp.network import ContractError, NetworkSpec, ParamSet, forward, ones_masks, weight_average_forward
from dropgp.numerics import DomainError, RngState
from dropgp.uncertainty import (
    CalibrationTable,
    McConfig,
    calibration_percentile,
    enumerate_masks_oracle,
    mc_predict,
    mc_predict_batch,
    predictive_log_likelihood,
    sample_outputs,
    standard_dropout_predict,
    summarize_samples,
    write_predictions_csv,
)


@pytest.fixture
def tiny():
    spec = NetworkSpec((2, 3, 3, 2), "tanh", output_bias=True)
    return spec, random_params(spec, RngState(31))


class TestMcPredict:
    def test_no_dropout(self, tiny):
        spec, p = tiny
        x = np.array([0.4, -0.3])
        s = mc_predict(spec, p, McConfig(20, keep_probs=1.0, tau=4.0), x, keep_samples=True)
        det = forward(spec, p, ones_masks(spec), x)
        np.testing.assert_allclose(s.mean, det, rtol=1e-15)
        assert np.all(s.samples == s.samples[0])
        np.testing.assert_allclose(s.covariance, np.eye(2) / 4.0, atol=1e-15)

    def test_zero_samples(self):
        with pytest.raises(ContractError):
            McConfig(0)
        with pytest.raises(DomainError):
            McConfig(5, tau=0.0)

    def test_vs_enumeration(self, tiny):
        spec, p = tiny
        x, keep, tau = np.array([1.0, 0.5]), (0.7, 0.5, 0.8), 2.0
        exact = enumerate_masks_oracle(spec, p, keep, tau, x)
        mc = mc_predict(spec, p, McConfig(100_000, 3, keep, tau), x)
        assert np.all(np.abs(mc.mean - exact.mean) <= 3 * mc.mean_stderr)
        assert np.all(np.abs(mc.covariance - exact.covariance) <= 3 * mc.covariance_stderr)

    def test_bilinear_mean(self, rng):
        spec = NetworkSpec((3, 4, 2), "identity")
        p = ParamSet([rng.normal(12).reshape(3, 4), rng.normal(8).reshape(4, 2)], [np.zeros(4)])
        x, keep = rng.normal(3), (0.6, 0.3)
        exact = x @ (keep[0] * p.weights[0]) @ (keep[1] * p.weights[1])
        mc = mc_predict(spec, p, McConfig(100_000, 5, keep), x)
        assert np.all(np.abs(mc.mean - exact) <= 3 * mc.mean_stderr)

    def test_second_moment_floor_and_psd(self, tiny):
        spec, p = tiny
        for T in (1, 2, 17):
            s = mc_predict(spec, p, McConfig(T, T, 0.5, 3.0), np.array([0.1, 0.2]))
            assert np.all(np.diag(s.second_moment) >= 1 / 3.0)
            assert np.allclose(s.covariance, s.covariance.T, atol=0)
            assert np.linalg.eigvalsh(s.covariance).min() >= -1e-10

    def test_convergence_rate(self, tiny):
        spec, p = tiny
        x, keep = np.array([0.2, 0.9]), 0.6
        exact = enumerate_masks_oracle(spec, p, keep, 1.0, x).mean
        dev = {}
        for T in (1000, 4000):
            dev[T] = np.mean([np.abs(mc_predict(spec, p, McConfig(T, trial, keep), x).mean - exact).mean()
                              for trial in range(50)])
        assert 1.5 <= dev[1000] / dev[4000] <= 2.5

    def test_batching_independent(self, tiny):
        spec, p = tiny
        X = np.array([[0.1, 0.2], [0.3, -1.0], [2.0, 0.0]])
        cfg = McConfig(40, 9, 0.5)
        full = sample_outputs(spec, p, cfg, X)
        np.testing.assert_array_equal(full[2], sample_outputs(spec, p, cfg, X[2:], point_ids=[2])[0])
        m, s, _ = mc_predict_batch(spec, p, cfg, X)
        one = mc_predict(spec, p, cfg, X[1], point_id=1)
        np.testing.assert_allclose(m[1], one.mean, rtol=1e-15)
        np.testing.assert_allclose(s[1], one.std, rtol=1e-12)

    def test_standard_dropout(self, tiny):
        spec, p = tiny
        X = np.array([[0.5, 0.5]])
        np.testing.assert_array_equal(standard_dropout_predict(spec, p, 0.5, X), weight_average_forward(spec, p, 0.5, X))


class TestEnumeration:
    def test_keep_one(self, tiny):
        spec, p = tiny
        x = np.array([0.3, 0.7])
        s = enumerate_masks_oracle(spec, p, 1.0, 2.0, x)
        np.testing.assert_allclose(s.mean, forward(spec, p, ones_masks(spec), x), rtol=1e-15)
        np.testing.assert_allclose(s.covariance, np.eye(2) / 2.0, atol=1e-14)

    def test_keep_zero(self, tiny):
        spec, p = tiny
        s = enumerate_masks_oracle(spec, p, 0.0, 1.0, np.array([0.3, 0.7]))
        np.testing.assert_allclose(s.mean, p.output_bias, rtol=1e-15)

    def test_total_probability(self, tiny):
        spec, p = tiny
        _, total = enumerate_masks_oracle(spec, p, (0.3, 0.55, 0.9), 1.0, np.zeros(2), return_total=True)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_budget(self):
        spec = NetworkSpec((10, 10, 5, 1))
        with pytest.raises(ContractError):
            enumerate_masks_oracle(spec, random_params(spec, RngState(0)), 0.5, 1.0, np.zeros(10))


def direct_ll(Y, y, tau):
    D = Y.shape[1]
    dens = [(tau / (2 * math.pi)) ** (D / 2) * math.exp(-0.5 * tau * np.sum((y - yt) ** 2)) for yt in Y]
    return math.log(np.mean(dens))


class TestLogLikelihood:
    def test_single_at_mean(self):
        assert predictive_log_likelihood([[1.5]], [1.5], 3.0) == pytest.approx(-0.5 * math.log(2 * math.pi) + 0.5 * math.log(3.0), abs=1e-15)

    def test_equal_samples(self, rng):
        y, yt = rng.normal(3), rng.normal(3)
        assert predictive_log_likelihood(np.tile(yt, (50, 1)), y, 2.0) == pytest.approx(
            predictive_log_likelihood(yt[None], y, 2.0), abs=1e-13)

    def test_direct_oracle(self):
        for i in range(100):
            r = RngState(12, i)
            T, D = 1 + int(20 * r.uniform(1)[0]), 1 + int(3 * r.uniform(1)[0])
            Y, y = r.normal(T * D).reshape(T, D), r.normal(D)
            tau = 0.2 + 3 * r.uniform(1)[0]
            assert abs(predictive_log_likelihood(Y, y, tau) - direct_ll(Y, y, tau)) <= 1e-12

    def test_tau_penalty(self):
        r = RngState(13)
        tau_star, n = 25.0, 400
        mu = r.normal(n)
        y = mu + r.normal(n) / math.sqrt(tau_star)
        ll = lambda tau: sum(predictive_log_likelihood(np.array([[m]]), [v], tau) for m, v in zip(mu, y))
        assert ll(tau_star) > ll(100 * tau_star)
        assert ll(tau_star) > ll(tau_star / 100)

    def test_errors(self):
        with pytest.raises(DomainError):
            predictive_log_likelihood([[0.0]], [0.0], 0.0)
        with pytest.raises(ContractError):
            predictive_log_likelihood([[0.0, 1.0]], [0.0], 1.0)


class TestCalibration:
    def test_extreme_scenarios(self):
        assert calibration_percentile(CalibrationTable(np.linspace(0.2, 2.0, 50)), 5.0) == 1.0
        assert calibration_percentile(CalibrationTable(np.linspace(10, 15, 50)), 5.0) == 0.0

    def test_median(self):
        t = CalibrationTable(RngState(1).uniform(101))
        assert abs(calibration_percentile(t, float(np.median(t.values))) - 0.5) <= 1 / t.count

    def test_ecdf_at_entries(self):
        t = CalibrationTable([3.0, 1.0, 2.0, 2.0])
        assert [calibration_percentile(t, v) for v in (1.0, 2.0, 3.0)] == [0.25, 0.75, 1.0]
        assert calibration_percentile(t, 1.5) == pytest.approx(0.5)

    def test_monotone(self):
        t = CalibrationTable(RngState(2).uniform(30) * 3)
        vals = [calibration_percentile(t, s) for s in np.linspace(0, 4, 500)]
        assert np.all(np.diff(vals) >= 0)

    def test_errors(self):
        with pytest.raises(DomainError):
            calibration_percentile(CalibrationTable([1.0]), -0.1)
        with pytest.raises(ContractError):
            CalibrationTable([])
        with pytest.raises(DomainError):
            CalibrationTable([-1.0, 2.0])

    def test_from_stds(self):
        t = CalibrationTable.from_stds([[1.0, 3.0], [0.5, 0.5]])
        np.testing.assert_array_equal(t.values, [0.5, 2.0])


def test_summarize_matches_definition(rng):
    Y = rng.normal(30).reshape(10, 3)
    s = summarize_samples(Y, 2.0)
    np.testing.assert_allclose(s.second_moment, Y.T @ Y / 10 + np.eye(3) / 2, rtol=1e-14)
    np.testing.assert_allclose(s.covariance, s.second_moment - np.outer(Y.mean(0), Y.mean(0)), rtol=1e-13, atol=1e-15)


def test_predictions_csv(tmp_path):
    path = tmp_path / "p.csv"
    write_predictions_csv(path, np.array([[1.0], [2.0]]), np.array([[0.1], [0.2]]), [0.5, 1.0], [-1.0, -2.0],
                          np.zeros((2, 3, 1)))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["id", "mean_0", "std_0", "percentile", "loglik", "sample_0_0", "sample_1_0", "sample_2_0"]
    assert rows[2][:5] == ["1", "2.0", "0.2", "1.0", "-2.0"]
