"""Gaussian-process view of the dropout network.

Finite-rank covariance from random nonlinear features, reparametrised weight
draws, the single-sample Monte Carlo objectives for regression and
classification, the weight-decay/precision conversion, and a two-hidden-layer
deep GP sampler.
"""
from dataclasses import dataclass, replace
import csv
import math

import numpy as np

from dropgp.network import (
    ContractError,
    Dataset,
    HyperParams,
    MaskSet,
    ParamSet,
    activate,
    forward_batch,
    gradients,
    log_softmax_true,
    normalize_keep_probs,
    ones_masks,
)
from dropgp.numerics import DomainError


# ---------------------------------------------------------------- features

def feature_map(x, W1, b, nonlinearity, K=None):
    """phi(x) = sqrt(1/K) * sigma(W1^T x + b) as a length-K row vector."""
    x = np.asarray(x, dtype=np.float64)
    W1 = np.atleast_2d(np.asarray(W1, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    if W1.shape[0] != x.shape[0] or b.shape != (W1.shape[1],):
        raise ContractError(f"shapes x{x.shape}, W1{W1.shape}, b{b.shape} disagree")
    K = W1.shape[1] if K is None else K
    return math.sqrt(1.0 / K) * activate(W1.T @ x + b, nonlinearity)


def feature_matrix(X, W1, b, nonlinearity):
    """Phi with rows phi(x_n); N x K."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W1 = np.atleast_2d(np.asarray(W1, dtype=np.float64))
    if X.shape[1] != W1.shape[0] or np.shape(b) != (W1.shape[1],):
        raise ContractError(f"shapes X{X.shape}, W1{W1.shape}, b{np.shape(b)} disagree")
    return math.sqrt(1.0 / W1.shape[1]) * activate(X @ W1 + b, nonlinearity)


@dataclass
class CovarianceMatrix:
    values: np.ndarray

    def is_symmetric(self, tol=1e-12):
        v = self.values
        return bool(np.max(np.abs(v - v.T), initial=0.0) <= tol * max(1.0, np.max(np.abs(v), initial=0.0)))

    def min_eig_ratio(self):
        """Smallest eigenvalue over the spectral norm (>= -1e-8 for PSD)."""
        eig = np.linalg.eigvalsh(0.5 * (self.values + self.values.T))
        top = np.max(np.abs(eig))
        return float(eig[0] / top) if top > 0 else 0.0

    def is_psd(self, tol=1e-8):
        return self.min_eig_ratio() >= -tol

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


def finite_rank_covariance(X, W1, b, nonlinearity):
    """K_hat(x_i, x_j) = (1/K) sum_k sigma(w_k^T x_i + b_k) sigma(w_k^T x_j + b_k).

    Accumulated one random feature at a time, which keeps it independent of
    the Phi Phi^T route.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W1 = np.atleast_2d(np.asarray(W1, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    if X.shape[0] == 0:
        raise ContractError("X must be non-empty")
    if X.shape[1] != W1.shape[0] or b.shape != (W1.shape[1],):
        raise ContractError(f"shapes X{X.shape}, W1{W1.shape}, b{b.shape} disagree")
    K = W1.shape[1]
    S = activate(X @ W1 + b, nonlinearity)
    acc = np.zeros((X.shape[0], X.shape[0]))
    for k in range(K):
        s = S[:, k]
        acc += np.outer(s, s)
    return CovarianceMatrix(acc / K)


def covariance_mc_estimate(x, y, W1, b, nonlinearity):
    """Finite-rank estimate of K(x, y) and its Monte Carlo standard error."""
    sx = activate(np.asarray(x) @ W1 + b, nonlinearity)
    sy = activate(np.asarray(y) @ W1 + b, nonlinearity)
    prod = sx * sy
    return float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(prod.size))


# ---------------------------------------------------------------- reparametrisation

@dataclass
class ReparamDraw:
    """Gaussian noise for every weight matrix and hidden bias, plus masks.

    ``epsilons[i]`` has the shape of ``M_i``; ``bias_epsilons[i]`` that of
    ``m_i``; masks are single 1-D vectors.
    """

    epsilons: list
    bias_epsilons: list
    masks: MaskSet
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError(f"sigma must be >= 0, got {self.sigma}")


def sample_reparam_draw(spec, keep_probs, sigma, rng):
    keep_probs = normalize_keep_probs(spec, keep_probs)
    eps = [rng.normal(spec.widths[i] * spec.widths[i + 1]).reshape(spec.widths[i], spec.widths[i + 1])
           for i in range(spec.n_layers)]
    beps = [rng.normal(k) for k in spec.hidden]
    masks = [(rng.uniform(k) < p).astype(np.float64) for k, p in zip(spec.widths[:-1], keep_probs)]
    return ReparamDraw(eps, beps, MaskSet(masks, keep_probs), sigma)


def reparametrise(params, draw):
    """W_i = z_i (M_i + s eps_i) + (1 - z_i) s eps_i and b = m + s eps.

    With s = 0 this is exactly (z_i M_i, m).
    """
    s = draw.sigma
    weights = []
    for M, eps, z in zip(params.weights, draw.epsilons, draw.masks.masks):
        if M.shape != eps.shape or np.ndim(z) != 1 or len(z) != M.shape[0]:
            raise ContractError("draw shapes do not match the parameters")
        zc = np.asarray(z, dtype=np.float64)[:, None]
        weights.append(zc * (M + s * eps) + (1.0 - zc) * (s * eps))
    biases = [m + s * e for m, e in zip(params.biases, draw.bias_epsilons)]
    ob = None if params.output_bias is None else params.output_bias.copy()
    return ParamSet(weights, biases, ob)


def gp_forward(spec, params, draw, X):
    """Outputs of the GP approximation for realised weights (scaled features)."""
    gspec = replace(spec, scale_features=True)
    return forward_batch(gspec, reparametrise(params, draw), X, ones_masks(gspec))


# ---------------------------------------------------------------- objectives

def _check_tau(tau):
    if not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau}")


def _prior_coefficients(spec, keep_probs, lengthscale, bias_lengthscale, k_scaling):
    """Coefficients c with KL mean-part sum_i (c_i / 2) ||M_i||^2 (+ biases)."""
    wc = []
    for i, p in enumerate(keep_probs):
        c = p
        if i == 0:
            c *= lengthscale ** 2
        elif k_scaling:
            c *= spec.widths[i]
        wc.append(c)
    bc = [bias_lengthscale ** 2] * len(spec.hidden)
    return wc, bc


def _penalty(params, wc, bc):
    total = sum(c * float(np.sum(w * w)) for c, w in zip(wc, params.weights))
    total += sum(c * float(np.sum(b * b)) for c, b in zip(bc, params.biases))
    return total


def _objective(spec, params, tau, data, masks, keep_probs, lengthscale=1.0,
               bias_lengthscale=1.0, k_scaling=False):
    keep_probs = normalize_keep_probs(spec, keep_probs if keep_probs is not None else masks.keep_probs)
    fspec = replace(spec, scale_features=not k_scaling)
    out = forward_batch(fspec, params, data.X, masks)
    n = data.n
    wc, bc = _prior_coefficients(spec, keep_probs, lengthscale, bias_lengthscale, k_scaling)
    if data.task == "regression":
        _check_tau(tau)
        fit = -float(np.sum((data.Y - out) ** 2)) / (2.0 * n)
        return fit - _penalty(params, wc, bc) / (2.0 * tau * n)
    fit = float(np.mean(log_softmax_true(out, data.labels)))
    return fit - _penalty(params, wc, bc) / (2.0 * n)


def gp_mc_objective_regression(spec, params, hyper, data, masks, keep_probs=None):
    """Scaled single-sample GP-MC lower bound for regression (sigma collapsed to 0).

    -(1/2N) sum ||y_n - y_hat_n||^2 - sum_i p_i/(2 tau N) ||M_i||^2
    - sum_i 1/(2 tau N) ||m_i||^2, with y_hat from sqrt(1/K)-scaled features.
    """
    if data.task != "regression":
        raise ContractError("regression objective needs real-valued targets")
    return _objective(spec, params, hyper.tau, data, masks, keep_probs)


def gp_mc_objective_classification(spec, params, hyper, data, masks, keep_probs=None):
    """(1/N) sum log p_hat[n, c_n] - sum_i p_i/(2N) ||M_i||^2 - sum_i 1/(2N) ||m_i||^2."""
    if data.task != "classification":
        raise ContractError("classification objective needs labels")
    return _objective(spec, params, 1.0, data, masks, keep_probs)


def lengthscale_objective_regression(spec, params, hyper, data, masks, lengthscale,
                                     bias_lengthscale, use_K_scaling=False, keep_probs=None):
    """Regression objective under N(0, l^-2 I) first-layer and N(0, l'^-2 I) bias priors.

    With ``use_K_scaling`` the network is evaluated without the sqrt(1/K)
    feature scaling and the decay on ``M_i`` (i >= 2) is multiplied by the width
    feeding that layer.
    """
    if not (lengthscale > 0 and bias_lengthscale > 0):
        raise DomainError("length-scales must be > 0")
    if data.task != "regression":
        raise ContractError("regression objective needs real-valued targets")
    return _objective(spec, params, hyper.tau, data, masks, keep_probs,
                      lengthscale, bias_lengthscale, use_K_scaling)


def mapped_hyperparams(spec, keep_probs, n, tau=1.0, lengthscale=1.0, bias_lengthscale=1.0,
                       use_K_scaling=False, task="regression"):
    """Weight decays making dropout_cost equal to minus the scaled GP-MC objective.

    Regression: lambda_1 = l^2 p_1/(2 tau N), lambda_i = p_i/(2 tau N),
    bias decay l'^2/(2 tau N). Classification drops tau.
    """
    keep_probs = normalize_keep_probs(spec, keep_probs)
    wc, bc = _prior_coefficients(spec, keep_probs, lengthscale, bias_lengthscale, use_K_scaling)
    if task == "regression":
        _check_tau(tau)
        denom = 2.0 * tau * n
    else:
        denom = 2.0 * n
    return HyperParams(tau=tau, weight_decay=tuple(c / denom for c in wc),
                       bias_decay=tuple(c / denom for c in bc) or 0.0,
                       lengthscale=lengthscale, bias_lengthscale=bias_lengthscale)


def gp_objective_gradient(spec, params, hyper, data, masks, keep_probs=None, scale=1.0):
    """Gradient of ``scale`` times the GP-MC objective (scaled features)."""
    keep_probs = keep_probs if keep_probs is not None else masks.keep_probs
    mapped = mapped_hyperparams(spec, keep_probs, data.n, hyper.tau, task=data.task)
    gspec = replace(spec, scale_features=True)
    _, g = gradients(gspec, params, mapped, data, masks)
    return ParamSet.from_arrays(spec, [-scale * a for a in g.arrays()])


# ---------------------------------------------------------------- hyperparameter algebra

def _positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise DomainError(f"{name} must be > 0, got {v}")


def tau_from_weight_decay(lengthscale, p1, n, weight_decay):
    """tau = l^2 p_1 / (2 N lambda_1)."""
    _positive(lengthscale=lengthscale, n=n, weight_decay=weight_decay)
    if not 0 < p1 <= 1:
        raise DomainError(f"p1 must lie in (0, 1], got {p1}")
    return lengthscale ** 2 * p1 / (2.0 * n * weight_decay)


def weight_decay_from_tau(lengthscale, p1, n, tau):
    """lambda_1 = l^2 p_1 / (2 N tau)."""
    _positive(lengthscale=lengthscale, n=n, tau=tau)
    if not 0 < p1 <= 1:
        raise DomainError(f"p1 must lie in (0, 1], got {p1}")
    return lengthscale ** 2 * p1 / (2.0 * n * tau)


# ---------------------------------------------------------------- deep GP

@dataclass
class DeepGpSample:
    W1: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    Phi1: np.ndarray
    F1: np.ndarray
    Phi2: np.ndarray
    F2: np.ndarray
    Y: np.ndarray = None


def deep_two_layer_sample(X, K1, K2, D, rng, nonlinearity1="relu", nonlinearity2="relu",
                          tau=None, bias_lengthscale=1.0, second_bias=True):
    """Draw from the two-hidden-layer deep GP written with auxiliary weights.

    Columns of W1, W2, W3 are standard normal; b1 and b2 are N(0, l'^-2).
    F1 = Phi1 W2, Phi2 = sqrt(1/K2) sigma2(F1 + b2), F2 = Phi2 W3, and
    Y = F2 + tau^-1/2 noise when ``tau`` is given. ``second_bias=False`` fixes b2 = 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, Q = X.shape
    bstd = 1.0 / bias_lengthscale
    W1 = rng.normal(Q * K1).reshape(Q, K1)
    b1 = bstd * rng.normal(K1)
    Phi1 = feature_matrix(X, W1, b1, nonlinearity1)
    W2 = rng.normal(K1 * K2).reshape(K1, K2)
    F1 = Phi1 @ W2
    b2 = bstd * rng.normal(K2) if second_bias else np.zeros(K2)
    Phi2 = math.sqrt(1.0 / K2) * activate(F1 + b2, nonlinearity2)
    W3 = rng.normal(K2 * D).reshape(K2, D)
    F2 = Phi2 @ W3
    Y = None
    if tau is not None:
        _check_tau(tau)
        Y = F2 + rng.normal(n * D).reshape(n, D) / math.sqrt(tau)
    return DeepGpSample(W1, b1, b2, W2, W3, Phi1, F1, Phi2, F2, Y)


def first_layer_outputs(Phi1, K2, draws, rng):
    """``draws`` independent F1 = Phi1 W2 for fixed Phi1; shape (draws, N, K2)."""
    K1 = Phi1.shape[1]
    W2 = rng.normal(draws * K1 * K2).reshape(draws, K1, K2)
    return np.einsum("nk,tkj->tnj", Phi1, W2)
