"""Self-check suites run by ``dropgp check``.

Each suite uses fixed seeds and returns a list of :class:`CheckRow`. A row
passes when ``value <= limit`` (errors, ratios of error to tolerance).
"""
from dataclasses import dataclass, replace
import math

import numpy as np

from dropgp.gp import (
    first_layer_outputs,
    gp_mc_objective_classification,
    gp_mc_objective_regression,
    mapped_hyperparams,
)
from dropgp.kl import (
    analytic_gaussian_kl,
    dropout_kl_terms,
    dropout_row_mixture,
    kl_mog_approx,
    kl_mog_approx_lengthscale,
    MixtureSpec,
)
from dropgp.network import (
    Dataset,
    HyperParams,
    MaskSet,
    NetworkSpec,
    ParamSet,
    dropout_cost,
    gradients,
    param_shapes,
    sample_point_masks,
)
from dropgp.numerics import RngState
from dropgp.uncertainty import McConfig, enumerate_masks_oracle, mc_predict

# Relative error floor for the gradient check: with h = 1e-6 central
# differences carry ~1e-10 absolute round-off, so entries below this
# magnitude are compared absolutely.
GRAD_REL_FLOOR = 1e-4


@dataclass
class CheckRow:
    name: str
    value: float
    limit: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.limit)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# ---------------------------------------------------------------- random instances

def random_instance(rng, task="regression", max_dim=8, max_n=32, layers=None,
                    nonlinearity=None, scale_features=True):
    """A random (spec, params, data, masks, tau) for the objective identities."""
    u = lambda: float(rng.uniform(1)[0])
    dim = lambda: 1 + int(u() * max_dim)
    L = layers if layers is not None else 1 + int(u() * 2)
    widths = (dim(),) + tuple(dim() for _ in range(L)) + (max(dim(), 2) if task == "classification" else dim(),)
    nl = nonlinearity or ("relu", "tanh", "identity")[int(u() * 3)]
    spec = NetworkSpec(widths, nl, scale_features, output_bias=u() < 0.5)
    arrays = [rng.normal(int(np.prod(s))).reshape(s) for s in param_shapes(spec)]
    params = ParamSet.from_arrays(spec, arrays)
    n = 1 + int(u() * max_n)
    X = rng.normal(n * widths[0]).reshape(n, widths[0])
    if task == "regression":
        data = Dataset(X, Y=rng.normal(n * widths[-1]).reshape(n, widths[-1]))
    else:
        data = Dataset(X, labels=1 + (rng.uniform(n) * widths[-1]).astype(np.int64))
    keep = tuple(0.05 + 0.95 * rng.uniform(spec.n_layers))
    masks = sample_point_masks(spec, keep, rng.child(1), np.arange(n))
    tau = (0.1, 1.0, 10.0)[int(u() * 3)]
    return spec, params, data, masks, tau


def equivalence_errors(task, count=100, seed=11):
    """Relative errors between dropout_cost and the negated GP-MC objective."""
    errs = []
    objective = gp_mc_objective_regression if task == "regression" else gp_mc_objective_classification
    root = RngState(seed, 100 if task == "regression" else 101)
    for i in range(count):
        spec, params, data, masks, tau = random_instance(root.child(i), task)
        hyper = mapped_hyperparams(spec, masks.keep_probs, data.n, tau, task=task)
        cost = dropout_cost(spec, params, hyper, data, masks)
        obj = objective(spec, params, HyperParams(tau=tau), data, masks)
        errs.append(rel_err(cost, -obj))
    return np.array(errs)


def suite_equivalence():
    reg = equivalence_errors("regression")
    cls = equivalence_errors("classification")
    return [CheckRow("regression objective identity (max rel err)", reg.max(), 1e-10),
            CheckRow("classification objective identity (max rel err)", cls.max(), 1e-10)]


# ---------------------------------------------------------------- KL

def random_gaussian(rng, K):
    mu = rng.normal(K)
    A = rng.normal(K * K).reshape(K, K)
    return mu, A @ A.T / K + 0.5 * np.eye(K)


def suite_kl():
    rng = RngState(21, 0)
    worst_l1 = 0.0
    for i in range(50):
        r = rng.child(i)
        K = 1 + int(r.uniform(1)[0] * 64)
        mu, cov = random_gaussian(r, K)
        q = MixtureSpec([1.0], [mu], [cov])
        diff = kl_mog_approx(q) - analytic_gaussian_kl(mu, cov)
        worst_l1 = max(worst_l1, abs(diff + 0.5 * K * math.log(2 * math.pi)))
    # permutation invariance and the constant offset of the length-scale form
    perm_err, offsets = 0.0, []
    for i in range(20):
        r = rng.child(1000 + i)
        K, L = 6, 3
        w = r.uniform(L) + 0.1
        w = w / w.sum()
        comps = [random_gaussian(r.child(j), K) for j in range(L)]
        q = MixtureSpec(w, [c[0] for c in comps], [c[1] for c in comps])
        perm_err = max(perm_err, abs(kl_mog_approx(q) - kl_mog_approx(q.permuted([2, 0, 1]))))
        offsets.append(kl_mog_approx_lengthscale(q, 1.0) - kl_mog_approx(q) - float(-np.sum(w * np.log(w))))
    # row-wise dropout KL mean parts
    r = rng.child(5000)
    M1 = r.normal(12).reshape(3, 4)
    terms = dropout_kl_terms(M1, r.normal(8).reshape(4, 2), r.normal(4), 0.3, 0.7, 0.6)
    rowwise = 0.0
    for row in M1:
        q = dropout_row_mixture(row, 0.7, 0.3)
        ref = kl_mog_approx(MixtureSpec(q.weights, [np.zeros(4), np.zeros(4)], q.covariances))
        rowwise += kl_mog_approx(q) - ref
    return [
        CheckRow("single Gaussian: approx - analytic + (K/2)log 2pi", worst_l1, 1e-12),
        CheckRow("component permutation invariance", perm_err, 1e-12),
        CheckRow("length-scale form offset spread", float(np.ptp(offsets)), 1e-10),
        CheckRow("dropout KL mean part vs row-wise mixture", abs(terms.w1.mean_part - rowwise), 1e-10),
    ]


# ---------------------------------------------------------------- MC vs enumeration

def tiny_network(seed=31):
    spec = NetworkSpec((2, 4, 4, 2), "tanh", output_bias=True)
    rng = RngState(seed, 0)
    arrays = [rng.normal(int(np.prod(s))).reshape(s) for s in param_shapes(spec)]
    return spec, ParamSet.from_arrays(spec, arrays)


def mc_oracle_zscores(samples=100_000, seed=32):
    spec, params = tiny_network()
    keep, tau = (0.8, 0.6, 0.7), 4.0
    x = np.array([0.3, -1.1])
    exact = enumerate_masks_oracle(spec, params, keep, tau, x)
    mc = mc_predict(spec, params, McConfig(samples, seed, keep, tau), x)
    z_mean = np.abs(mc.mean - exact.mean) / mc.mean_stderr
    z_cov = np.abs(mc.covariance - exact.covariance) / mc.covariance_stderr
    floor = float(np.min(np.diag(mc.second_moment)) - 1.0 / tau)
    return z_mean, z_cov, floor


def suite_mc_oracle():
    z_mean, z_cov, floor = mc_oracle_zscores()
    return [CheckRow("MC mean vs enumeration (max |z|)", float(z_mean.max()), 3.0),
            CheckRow("MC covariance vs enumeration (max |z|)", float(z_cov.max()), 3.0),
            CheckRow("second-moment diagonal minus 1/tau (negated)", -floor, 0.0)]


# ---------------------------------------------------------------- gradients

def _preacts(spec, params, data, masks):
    h, out = data.X, []
    for i in range(spec.n_layers - 1):
        a = (h * masks.masks[i]) @ params.weights[i] + params.biases[i]
        out.append(a)
        h = np.maximum(a, 0) * spec.feature_scale(i)
    return out


def gradient_check_instance(rng, h=1e-6):
    """(max relative error, masked-row gradient max |g|) for one random network."""
    task = "classification" if rng.uniform(1)[0] < 0.4 else "regression"
    for attempt in range(100):
        r = rng.child(attempt)
        spec, params, data, masks, tau = random_instance(r, task, max_dim=5, max_n=6,
                                                         scale_features=r.uniform(1)[0] < 0.5)
        z = [np.array(m) for m in masks.masks]
        z[0][:, 0] = 0.0  # first input row of M_1 dropped for every point
        masks = MaskSet(z, masks.keep_probs)
        if spec.nonlinearity == "relu" and any(np.min(np.abs(a)) < 1e-3 for a in _preacts(spec, params, data, masks)):
            continue
        break
    wd = tuple([0.0] + list(0.01 + 0.1 * r.uniform(spec.n_layers - 1)))
    hyper = HyperParams(tau=tau, weight_decay=wd, bias_decay=0.05)
    _, grad = gradients(spec, params, hyper, data, masks)
    flat, g = params.flat(), grad.flat()
    worst = 0.0
    for k in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[k] += h
        dn[k] -= h
        fd = (dropout_cost(spec, ParamSet.from_flat(spec, up), hyper, data, masks)
              - dropout_cost(spec, ParamSet.from_flat(spec, dn), hyper, data, masks)) / (2 * h)
        worst = max(worst, abs(g[k] - fd) / max(abs(g[k]), abs(fd), GRAD_REL_FLOOR))
    return worst, float(np.max(np.abs(grad.weights[0][0])))


def suite_gradients(count=20, seed=41):
    root = RngState(seed, 0)
    res = [gradient_check_instance(root.child(i)) for i in range(count)]
    return [CheckRow("max relative error vs central differences", max(r[0] for r in res), 1e-5),
            CheckRow("masked-out row gradient (max |g|)", max(r[1] for r in res), 0.0)]


# ---------------------------------------------------------------- deep GP

def deep_gp_zscores(draws=100_000, seed=51):
    """z-scores of the F1 mean (vs 0) and row covariance (vs Phi1 Phi1')."""
    rng = RngState(seed, 0)
    N, Q, K1, K2 = 6, 2, 4, 3
    X = rng.normal(N * Q).reshape(N, Q)
    W1 = rng.normal(Q * K1).reshape(Q, K1)
    b1 = rng.normal(K1)
    Phi1 = math.sqrt(1.0 / K1) * np.maximum(X @ W1 + b1, 0.0)
    F = first_layer_outputs(Phi1, K2, draws, rng.child(1))  # (draws, N, K2)
    cols = F.transpose(0, 2, 1).reshape(-1, N)  # each column of each draw is one sample
    S = cols.shape[0]
    mean = cols.mean(axis=0)
    z_mean = np.abs(mean) / (cols.std(axis=0, ddof=1) / math.sqrt(S))
    prods = cols[:, :, None] * cols[:, None, :]
    cov = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / math.sqrt(S)
    z_cov = np.abs(cov - Phi1 @ Phi1.T) / se
    return z_mean, z_cov


def suite_deep_gp():
    z_mean, z_cov = deep_gp_zscores()
    return [CheckRow("E[F1] = 0 (max |z|)", float(z_mean.max()), 3.0),
            CheckRow("Cov[F1] = Phi1 Phi1' (max |z|)", float(z_cov.max()), 3.0)]


SUITES = {
    "equivalence": suite_equivalence,
    "kl": suite_kl,
    "mc-oracle": suite_mc_oracle,
    "gradients": suite_gradients,
    "deep-gp": suite_deep_gp,
}


def format_rows(rows):
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  {'value':>12}  {'limit':>10}  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.value:>12.4g}  {r.limit:>10.3g}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
