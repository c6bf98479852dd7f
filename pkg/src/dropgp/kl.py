"""KL divergences between Gaussian mixtures and isotropic normal priors.

``kl_mog_approx`` is the large-K closed form (true KL up to an additive
constant); ``mc_kl_oracle`` is a plain Monte Carlo estimate used to check it.
Covariances may be given as full matrices, diagonal vectors or isotropic
scalar variances.
"""
from dataclasses import dataclass
from typing import NamedTuple
import math

import numpy as np

from dropgp.numerics import ContractError, DomainError, logsumexp, normal_rows, uniform_rows

LOG_2PI = math.log(2.0 * math.pi)
PIVOT_MIN = 1e-12


def _cov_stats(cov, K):
    """(trace, log-determinant) of a full, diagonal or isotropic covariance."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        if not cov > PIVOT_MIN:
            raise DomainError("covariance is singular")
        return K * float(cov), K * math.log(float(cov))
    if cov.ndim == 1:
        if cov.shape != (K,):
            raise ContractError(f"diagonal covariance must have length {K}")
        if np.min(cov) <= PIVOT_MIN:
            raise DomainError("covariance is singular")
        return float(cov.sum()), float(np.log(cov).sum())
    if cov.shape != (K, K):
        raise ContractError(f"covariance must be {K}x{K}")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DomainError("covariance is not positive definite") from exc
    piv = np.diag(L) ** 2
    if np.min(piv) <= PIVOT_MIN:
        raise DomainError("covariance is singular")
    return float(np.trace(cov)), float(np.log(piv).sum())


def _cov_factor(cov, K):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        return math.sqrt(float(cov))
    if cov.ndim == 1:
        return np.sqrt(cov)
    return np.linalg.cholesky(cov)


@dataclass
class MixtureSpec:
    """q(x) = sum_i w_i N(x; mu_i, Sigma_i) over R^K."""

    weights: np.ndarray
    means: list
    covariances: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = [np.asarray(m, dtype=np.float64) for m in self.means]
        self.covariances = [np.asarray(c, dtype=np.float64) for c in self.covariances]
        if not (len(self.weights) == len(self.means) == len(self.covariances) >= 1):
            raise ContractError("weights, means and covariances must have equal non-zero length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ContractError("mixture weights must be a probability vector")
        K = self.means[0].shape[0]
        if any(m.shape != (K,) for m in self.means):
            raise ContractError("all means must have the same dimension")
        for c in self.covariances:
            if c.ndim == 2 and np.max(np.abs(c - c.T)) > 1e-12 * max(1.0, np.max(np.abs(c))):
                raise ContractError("covariances must be symmetric")

    @property
    def dim(self):
        return self.means[0].shape[0]

    @property
    def n_components(self):
        return len(self.weights)

    def permuted(self, order):
        return MixtureSpec(self.weights[list(order)], [self.means[i] for i in order],
                           [self.covariances[i] for i in order])


def weight_entropy(weights):
    """-sum w log w with 0 log 0 = 0."""
    w = np.asarray(weights, dtype=np.float64)
    nz = w[w > 0]
    return float(-np.sum(nz * np.log(nz)))


def kl_mog_approx(q):
    """sum_i (w_i/2)(mu_i'mu_i + tr S_i - K(1 + log 2pi) - log|S_i|) - C.

    C = -sum_i w_i log w_i. This is the true KL to N(0, I_K) shifted by an
    unreported constant (-(K/2) log 2pi for a single component); it is only
    meaningful for large K with well-separated components.
    """
    K = q.dim
    total = 0.0
    for w, mu, cov in zip(q.weights, q.means, q.covariances):
        if w == 0:
            continue
        tr, logdet = _cov_stats(cov, K)
        total += 0.5 * w * (float(mu @ mu) + tr - K * (1.0 + LOG_2PI) - logdet)
    return total - weight_entropy(q.weights)


def analytic_gaussian_kl(mu, cov, lengthscale=1.0):
    """KL(N(mu, S) || N(0, l^-2 I_K))."""
    if not lengthscale > 0:
        raise DomainError("length-scale must be > 0")
    mu = np.asarray(mu, dtype=np.float64)
    K = mu.shape[0]
    tr, logdet = _cov_stats(cov, K)
    l2 = lengthscale ** 2
    return 0.5 * (l2 * float(mu @ mu) + l2 * tr - K - logdet + K * math.log(1.0 / l2))


def kl_mog_approx_lengthscale(q, lengthscale):
    """sum_i (w_i/2)(l^2 mu_i'mu_i + tr(l^2 S_i) - K - log|S_i| + K log l^-2)."""
    if not lengthscale > 0:
        raise DomainError("length-scale must be > 0")
    return float(sum(w * analytic_gaussian_kl(mu, cov, lengthscale)
                     for w, mu, cov in zip(q.weights, q.means, q.covariances) if w > 0))


class KLTerm(NamedTuple):
    mean_part: float
    sigma_part: float

    @property
    def total(self):
        return self.mean_part + self.sigma_part


class DropoutKL(NamedTuple):
    w1: KLTerm
    w2: KLTerm
    b: KLTerm


def _sigma_term(sigma):
    if sigma == 0:
        return math.inf
    s2 = sigma * sigma
    return s2 - math.log(s2) - 1.0


def dropout_kl_terms(M1, M2, m, sigma, p1, p2, main_text_factor=False):
    """KL of the dropout variational factors to standard normal priors, constants dropped.

    Row q of W1 is the mixture p1 N(m_q, s^2 I) + (1 - p1) N(0, s^2 I); the
    mixture approximation applied row by row gives
    (p1/2) sum_q m_q'm_q + (QK/2)(s^2 - log s^2 - 1). ``main_text_factor``
    doubles the sigma part to QK(s^2 - log s^2 - 1). sigma = 0 gives an
    infinite sigma part.
    """
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    M1, M2, m = (np.asarray(a, dtype=np.float64) for a in (M1, M2, m))
    st = _sigma_term(sigma)
    f = 1.0 if main_text_factor else 0.5
    w1 = KLTerm(0.5 * p1 * float(np.sum(M1 * M1)), f * M1.size * st)
    w2 = KLTerm(0.5 * p2 * float(np.sum(M2 * M2)), f * M2.size * st)
    b = KLTerm(0.5 * float(m @ m), 0.5 * m.size * st)
    return DropoutKL(w1, w2, b)


def dropout_row_mixture(row, p, sigma):
    """Two-component mixture of one weight row: p N(row, s^2 I) + (1-p) N(0, s^2 I)."""
    row = np.asarray(row, dtype=np.float64)
    return MixtureSpec([p, 1.0 - p], [row, np.zeros_like(row)], [np.float64(sigma ** 2)] * 2)


# ---------------------------------------------------------------- Monte Carlo oracle

def _component_logpdf(x, mu, cov):
    """log N(x; mu, cov) for the rows of x."""
    K = mu.shape[0]
    d = x - mu
    cov = np.asarray(cov)
    if cov.ndim == 0:
        quad = np.einsum("ij,ij->i", d, d) / float(cov)
        logdet = K * math.log(float(cov))
    elif cov.ndim == 1:
        quad = np.einsum("ij,ij->i", d / cov, d)
        logdet = float(np.log(cov).sum())
    else:
        L = np.linalg.cholesky(cov)
        sol = np.linalg.solve(L, d.T)
        quad = np.einsum("ij,ij->j", sol, sol)
        logdet = 2.0 * float(np.log(np.diag(L)).sum())
    return -0.5 * (quad + logdet + K * LOG_2PI)


def mixture_logpdf(x, q):
    comps = np.stack([np.log(w) + _component_logpdf(x, mu, cov) if w > 0 else np.full(x.shape[0], -np.inf)
                      for w, mu, cov in zip(q.weights, q.means, q.covariances)], axis=1)
    return logsumexp(comps, axis=1)


def sample_mixture(q, keys):
    """One draw per stream key: component by inverse CDF, then mu + L eps."""
    n, K = len(keys), q.dim
    u = uniform_rows(keys, 1)[:, 0]
    cdf = np.cumsum(q.weights)
    cdf[-1] = 1.0
    comp = np.searchsorted(cdf, u, side="right")
    eps = normal_rows(keys, K, start=1)
    x = np.empty((n, K))
    for i, (mu, cov) in enumerate(zip(q.means, q.covariances)):
        sel = comp == i
        if not sel.any():
            continue
        f = _cov_factor(cov, K)
        e = eps[sel]
        x[sel] = mu + (e @ f.T if np.ndim(f) == 2 else e * f)
    return x


def mc_kl_oracle(q, lengthscale, samples, rng, chunk=20000, batches=50):
    """Monte Carlo KL(q || N(0, l^-2 I)) with a batch-means standard error.

    Sample ``s`` comes from child stream ``s`` of ``rng``, so the estimate is
    independent of ``chunk``.
    """
    if samples < 1000:
        raise ContractError("mc_kl_oracle needs at least 1000 samples")
    if not lengthscale > 0:
        raise DomainError("length-scale must be > 0")
    K = q.dim
    l2 = lengthscale ** 2
    vals = np.empty(samples)
    for start in range(0, samples, chunk):
        ids = np.arange(start, min(start + chunk, samples), dtype=np.uint64)
        x = sample_mixture(q, rng.child_keys(ids))
        logp = -0.5 * (l2 * np.einsum("ij,ij->i", x, x) + K * LOG_2PI - K * math.log(l2))
        vals[start:start + len(ids)] = mixture_logpdf(x, q) - logp
    usable = samples - samples % batches
    means = vals[:usable].reshape(batches, -1).mean(axis=1)
    se = float(means.std(ddof=1) / math.sqrt(batches))
    return float(vals.mean()), se
