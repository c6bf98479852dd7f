import math

import numpy as np
import pytest

from dropgp.kl import (
    MixtureSpec,
    analytic_gaussian_kl,
    dropout_kl_terms,
    dropout_row_mixture,
    kl_mog_approx,
    kl_mog_approx_lengthscale,
    mc_kl_oracle,
    weight_entropy,
)
from dropgp.numerics import ContractError, DomainError, RngState

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def spd(r, K):
    A = r.normal(K * K).reshape(K, K)
    return A @ A.T / K + 0.5 * np.eye(K)


def random_mixture(r, K, L):
    w = r.uniform(L) + 0.1
    return MixtureSpec(w / w.sum(), [r.normal(K) for _ in range(L)], [spd(r.child(i), K) for i in range(L)])


class TestApprox:
    @pytest.mark.parametrize("K", [1, 5, 64])
    def test_standard_single(self, K):
        assert kl_mog_approx(MixtureSpec([1.0], [np.zeros(K)], [np.eye(K)])) == pytest.approx(-K * HALF_LOG_2PI, abs=1e-12)

    @pytest.mark.parametrize("cov_kind", ["full", "diag", "iso"])
    def test_single_vs_analytic(self, rng, cov_kind):
        K = 7
        mu = rng.normal(K)
        cov = {"full": spd(rng, K), "diag": 0.5 + rng.uniform(K), "iso": np.float64(0.7)}[cov_kind]
        q = MixtureSpec([1.0], [mu], [cov])
        assert kl_mog_approx(q) - analytic_gaussian_kl(mu, cov) == pytest.approx(-K * HALF_LOG_2PI, abs=1e-12)

    def test_permutation_exact(self, rng):
        q = random_mixture(rng, 5, 4)
        assert kl_mog_approx(q.permuted([3, 1, 0, 2])) == pytest.approx(kl_mog_approx(q), abs=1e-13)

    def test_zero_weight_convention(self, rng):
        q = MixtureSpec([1.0, 0.0], [rng.normal(3), rng.normal(3)], [np.eye(3), np.eye(3)])
        single = MixtureSpec([1.0], [q.means[0]], [np.eye(3)])
        assert kl_mog_approx(q) == kl_mog_approx(single)
        assert weight_entropy([0.5, 0.5, 0.0]) == pytest.approx(math.log(2))

    def test_gradient_is_decay(self, rng):
        # d/d mu_1 of the approximation for the dropout family is p1 mu_1
        K, p = 6, 0.3
        mu = rng.normal(K)
        f = lambda m: kl_mog_approx(MixtureSpec([p, 1 - p], [m, np.zeros(K)], [1e-4, 1e-4]))
        h = 1e-3
        for k in range(K):
            e = np.zeros(K)
            e[k] = h
            assert (f(mu + e) - f(mu - e)) / (2 * h) == pytest.approx(p * mu[k], rel=1e-8, abs=1e-10)

    def test_spec_validation(self):
        with pytest.raises(ContractError):
            MixtureSpec([0.5, 0.6], [np.zeros(2)] * 2, [1.0, 1.0])
        with pytest.raises(ContractError):
            MixtureSpec([1.0], [np.zeros(2)], [np.array([[1.0, 0.5], [0.0, 1.0]])])

    def test_singular(self):
        with pytest.raises(DomainError):
            kl_mog_approx(MixtureSpec([1.0], [np.zeros(2)], [np.diag([1.0, 0.0])]))
        with pytest.raises(DomainError):
            analytic_gaussian_kl(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]))


class TestAnalytic:
    def test_examples(self):
        assert analytic_gaussian_kl(np.zeros(3), np.eye(3)) == 0.0
        assert analytic_gaussian_kl(np.array([1.0, 0.0]), np.eye(2)) == pytest.approx(0.5, abs=1e-15)
        K = 4
        assert analytic_gaussian_kl(np.zeros(K), np.eye(K), 2.0) == pytest.approx(K * (3 - math.log(4)) / 2, rel=1e-14)

    def test_numerical_integration_1d(self):
        integrate = pytest.importorskip("scipy.integrate")
        l = 2.0
        q = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        logp = lambda x: -0.5 * l * l * x * x - 0.5 * math.log(2 * math.pi / (l * l))
        val, _ = integrate.quad(lambda x: q(x) * (math.log(q(x)) - logp(x)), -12, 12)
        assert analytic_gaussian_kl(np.zeros(1), np.eye(1), l) == pytest.approx(val, abs=1e-10)

    def test_domain(self):
        with pytest.raises(DomainError):
            analytic_gaussian_kl(np.zeros(2), np.eye(2), 0.0)


class TestLengthscaleApprox:
    def test_constant_offset(self):
        offs = []
        for i in range(10):
            q = random_mixture(RngState(3, i), 5, 3)
            offs.append(kl_mog_approx_lengthscale(q, 1.0) - kl_mog_approx(q))
        # offset is K(1 + log 2pi)/2 - K/2 + C with C fixed by the weights; remove C
        offs = [o - weight_entropy(random_mixture(RngState(3, i), 5, 3).weights) for i, o in enumerate(offs)]
        assert np.ptp(offs) < 1e-10
        assert offs[0] == pytest.approx(5 * HALF_LOG_2PI, abs=1e-10)

    def test_single_equals_analytic(self, rng):
        mu, cov = rng.normal(4), spd(rng, 4)
        q = MixtureSpec([1.0], [mu], [cov])
        assert kl_mog_approx_lengthscale(q, 1.7) == pytest.approx(analytic_gaussian_kl(mu, cov, 1.7), rel=1e-15)

    def test_quadratic_in_means(self, rng):
        q = random_mixture(rng, 4, 2)
        q2 = MixtureSpec(q.weights, [2 * m for m in q.means], q.covariances)
        expected = sum(0.5 * w * 3 * float(m @ m) for w, m in zip(q.weights, q.means))
        assert kl_mog_approx_lengthscale(q2, 1.0) - kl_mog_approx_lengthscale(q, 1.0) == pytest.approx(expected, rel=1e-12)


class TestDropoutKL:
    def test_zero_means_unit_sigma(self):
        t = dropout_kl_terms(np.zeros((3, 4)), np.zeros((4, 2)), np.zeros(4), 1.0, 0.3, 0.8)
        assert all(part == 0.0 for term in t for part in term)

    def test_p1_zero(self, rng):
        t = dropout_kl_terms(rng.normal(6).reshape(2, 3), rng.normal(3).reshape(3, 1), rng.normal(3), 0.5, 0.0, 0.5)
        assert t.w1.mean_part == 0.0 and t.w1.sigma_part > 0

    def test_bias_term(self, rng):
        m = rng.normal(5)
        t = dropout_kl_terms(np.zeros((1, 5)), np.zeros((5, 1)), m, 0.4, 1.0, 1.0)
        assert t.b.total == pytest.approx(0.5 * (m @ m + 5 * (0.16 - math.log(0.16) - 1)), rel=1e-14)

    @pytest.mark.parametrize("main_text", [False, True])
    def test_rowwise_consistency(self, rng, main_text):
        Q, K, p, s = 3, 4, 0.7, 0.3
        M1 = rng.normal(Q * K).reshape(Q, K)
        t = dropout_kl_terms(M1, np.zeros((K, 1)), np.zeros(K), s, p, 0.5, main_text_factor=main_text)
        mean_rows = sigma_rows = 0.0
        for row in M1:
            q = dropout_row_mixture(row, p, s)
            total = kl_mog_approx(q) + K * HALF_LOG_2PI + weight_entropy(q.weights)
            mean_rows += 0.5 * p * row @ row
            sigma_rows += total - 0.5 * p * row @ row
        assert t.w1.mean_part == pytest.approx(mean_rows, rel=1e-12)
        factor = 2.0 if main_text else 1.0
        assert t.w1.sigma_part == pytest.approx(factor * sigma_rows, rel=1e-12)

    def test_sigma_zero_and_negative(self, rng):
        t = dropout_kl_terms(np.ones((2, 2)), np.ones((2, 1)), np.ones(2), 0.0, 0.5, 0.5)
        assert t.w1.mean_part == 1.0 and math.isinf(t.w1.sigma_part)
        with pytest.raises(DomainError):
            dropout_kl_terms(np.ones((2, 2)), np.ones((2, 1)), np.ones(2), -1.0, 0.5, 0.5)


class TestMcOracle:
    def test_standard_normal(self):
        est, se = mc_kl_oracle(MixtureSpec([1.0], [np.zeros(3)], [np.eye(3)]), 1.0, 5000, RngState(1))
        assert abs(est) <= 3 * se + 1e-12

    @pytest.mark.parametrize("l", [1.0, 1.5])
    def test_single_gaussian(self, rng, l):
        mu, cov = rng.normal(3), spd(rng, 3)
        est, se = mc_kl_oracle(MixtureSpec([1.0], [mu], [cov]), l, 20_000, RngState(2))
        assert abs(est - analytic_gaussian_kl(mu, cov, l)) <= 3 * se

    def test_permutation(self, rng):
        q = random_mixture(rng, 3, 3)
        a, sa = mc_kl_oracle(q, 1.0, 20_000, RngState(4))
        b, sb = mc_kl_oracle(q.permuted([2, 0, 1]), 1.0, 20_000, RngState(5))
        assert abs(a - b) <= 3 * math.hypot(sa, sb)

    def test_chunk_independent(self, rng):
        q = random_mixture(rng, 3, 2)
        assert mc_kl_oracle(q, 1.0, 4000, RngState(6), chunk=1000) == mc_kl_oracle(q, 1.0, 4000, RngState(6), chunk=3000)

    def test_stderr_rate(self, rng):
        q = random_mixture(rng, 4, 2)
        _, s1 = mc_kl_oracle(q, 1.0, 25_000, RngState(7))
        _, s4 = mc_kl_oracle(q, 1.0, 100_000, RngState(8))
        assert 0.75 * 2 <= s1 / s4 <= 1.25 * 2

    def test_min_samples(self, rng):
        with pytest.raises(ContractError):
            mc_kl_oracle(random_mixture(rng, 2, 2), 1.0, 999, RngState(1))

    def test_dropout_family_constant_cancels(self):
        # two independent mean draws at K = 256: (approx - MC) agrees across draws
        K, diffs = 256, []
        for d in range(2):
            r = RngState(10, d)
            q = MixtureSpec([0.5, 0.5], [r.normal(K), np.zeros(K)], [1e-4, 1e-4])
            est, se = mc_kl_oracle(q, 1.0, 50_000, r.child(1))
            diffs.append((kl_mog_approx(q) - est, se))
        (a, sa), (b, sb) = diffs
        assert abs(a - b) <= 3 * math.hypot(sa, sb)


def test_large_k_validity():
    """Bias of the approximation (beyond MC noise) shrinks as K grows.

    Means are unit normal, covariances 4 I, so components overlap at K=16 and
    separate at K=256. The error is the RMS over 10 mixtures of
    approx - MC + (K/2) log 2pi with the MC variance subtracted.
    """
    err = {}
    for K, S in ((16, 100_000), (64, 50_000), (256, 25_000)):
        d, v = [], []
        for i in range(10):
            r = RngState(0, 1000 * K + i)
            q = MixtureSpec([0.5, 0.5], [r.normal(K), r.normal(K)], [4.0, 4.0])
            est, se = mc_kl_oracle(q, 1.0, S, r.child(9))
            d.append(kl_mog_approx(q) - est + K * HALF_LOG_2PI)
            v.append(se ** 2)
        err[K] = math.sqrt(max(np.mean(np.square(d)) - np.mean(v), 0.0))
    assert err[16] > err[64] and err[16] > err[256]
    assert err[16] > 0.1
