"""Dropout network: masked forward pass, losses, cost, gradients and SGD.

Shapes follow the row-vector convention ``h @ W``: layer ``i`` has weights of
shape ``(K_{i-1}, K_i)`` and a dropout mask of length ``K_{i-1}`` applied to its
input, which is the same as zeroing rows of the weight matrix.
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np

from dropgp import _kernels
from dropgp.numerics import (
    ContractError,
    DomainError,
    RngState,
    check_probability,
    logsumexp,
    uniform_rows,
)

NONLINEARITIES = {"identity": 0, "relu": 1, "tanh": 2}


def activate(a, name):
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    return a


def activate_grad(a, name):
    """Derivative of the nonlinearity at pre-activation ``a``; relu'(0) = 0."""
    if name == "relu":
        return (a > 0.0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    return np.ones_like(a)


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths ``(Q, K_1, ..., K_L, D)`` and per-layer options.

    ``scale_features`` multiplies every hidden output by sqrt(1/K_i), the
    feature-map convention of the finite-rank GP. ``output_bias`` adds a bias
    to the linear output layer.
    """

    widths: tuple
    nonlinearity: str = "relu"
    scale_features: bool = False
    output_bias: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 3:
            raise ContractError("need at least one hidden layer: widths (Q, K, ..., D)")
        if min(widths) < 1:
            raise ContractError(f"all widths must be >= 1, got {widths}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ContractError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def n_layers(self):
        """Number of weight layers."""
        return len(self.widths) - 1

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    @property
    def hidden(self):
        return self.widths[1:-1]

    def feature_scale(self, i):
        """Multiplier on the output of hidden layer ``i`` (0-based)."""
        return math.sqrt(1.0 / self.widths[i + 1]) if self.scale_features else 1.0


@dataclass
class ParamSet:
    """Weights ``M_i``, hidden biases ``m_i`` and an optional output bias."""

    weights: list
    biases: list
    output_bias: np.ndarray = None

    def arrays(self):
        out = list(self.weights) + list(self.biases)
        if self.output_bias is not None:
            out.append(self.output_bias)
        return out

    @classmethod
    def from_arrays(cls, spec, arrays):
        arrays = list(arrays)
        nw, nb = spec.n_layers, len(spec.hidden)
        ob = arrays[nw + nb] if spec.output_bias else None
        return cls(arrays[:nw], arrays[nw:nw + nb], ob)

    def copy(self):
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        None if self.output_bias is None else self.output_bias.copy())

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, spec, vec):
        out, pos = [], 0
        for shape in param_shapes(spec):
            n = int(np.prod(shape))
            out.append(np.array(vec[pos:pos + n], dtype=np.float64).reshape(shape))
            pos += n
        return cls.from_arrays(spec, out)

    def validate(self, spec):
        shapes = [a.shape for a in self.arrays()]
        if shapes != param_shapes(spec):
            raise ContractError(f"parameter shapes {shapes} do not match {param_shapes(spec)}")
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise ContractError("parameters contain non-finite entries")


def param_shapes(spec):
    w = spec.widths
    shapes = [(w[i], w[i + 1]) for i in range(spec.n_layers)]
    shapes += [(k,) for k in spec.hidden]
    if spec.output_bias:
        shapes.append((spec.output_dim,))
    return shapes


def zero_params(spec):
    return ParamSet.from_arrays(spec, [np.zeros(s) for s in param_shapes(spec)])


def init_params(spec, rng):
    """Weights uniform on [-sqrt(3/fan_in), sqrt(3/fan_in)], biases zero."""
    weights = []
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        bound = math.sqrt(3.0 / fan_in)
        u = rng.uniform(fan_in * fan_out).reshape(fan_in, fan_out)
        weights.append((2.0 * u - 1.0) * bound)
    biases = [np.zeros(k) for k in spec.hidden]
    ob = np.zeros(spec.output_dim) if spec.output_bias else None
    return ParamSet(weights, biases, ob)


def scale_weights(params, factors):
    """Multiply weight matrix ``i`` by ``factors[i]``; biases untouched."""
    factors = np.broadcast_to(np.asarray(factors, dtype=np.float64), (len(params.weights),))
    out = params.copy()
    out.weights = [w * f for w, f in zip(params.weights, factors)]
    return out


@dataclass
class MaskSet:
    """Per-layer input masks ``z_i`` (length ``K_{i-1}``) and keep probabilities.

    A mask may be 1-D (shared by every row) or 2-D with one row per data point.
    Entries are 0/1 for Bernoulli dropout or arbitrary reals for the
    multiplicative-Gaussian variant.
    """

    masks: list
    keep_probs: tuple = None

    def validate(self, spec, rows=None):
        if len(self.masks) != spec.n_layers:
            raise ContractError(f"expected {spec.n_layers} masks, got {len(self.masks)}")
        for i, z in enumerate(self.masks):
            z = np.asarray(z)
            if z.shape[-1] != spec.widths[i] or z.ndim > 2:
                raise ContractError(f"mask {i} has shape {z.shape}, expected (..., {spec.widths[i]})")
            if z.ndim == 2 and rows is not None and z.shape[0] != rows:
                raise ContractError(f"mask {i} has {z.shape[0]} rows for {rows} inputs")

    def rows(self, idx):
        """Restrict per-point masks to the data rows ``idx``."""
        return MaskSet([z[idx] if np.ndim(z) == 2 else z for z in self.masks], self.keep_probs)


def ones_masks(spec):
    return MaskSet([np.ones(k) for k in spec.widths[:-1]], tuple(1.0 for _ in range(spec.n_layers)))


def normalize_keep_probs(spec, keep_probs):
    p = np.broadcast_to(np.asarray(keep_probs, dtype=np.float64), (spec.n_layers,))
    return tuple(check_probability(v, "keep probability") for v in p)


def split_mask_block(spec, block, keep_probs=None):
    """Cut a (rows, sum K_{i-1}) block of mask entries into per-layer masks."""
    bounds = np.cumsum((0,) + spec.widths[:-1])
    return MaskSet([block[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])], keep_probs)


def masks_from_uniforms(spec, keep_probs, u):
    """Bernoulli masks from a (rows, sum K_{i-1}) block of uniforms."""
    keep_probs = normalize_keep_probs(spec, keep_probs)
    thresholds = np.concatenate([np.full(k, p) for k, p in zip(spec.widths[:-1], keep_probs)])
    return split_mask_block(spec, (u < thresholds).astype(np.float64), keep_probs)


def sample_point_masks(spec, keep_probs, rng, ids):
    """Fresh masks for each data point, drawn from that point's child stream.

    Row ``r`` depends only on ``(rng.seed, rng.stream, ids[r])``, so the result
    does not depend on how points are batched or ordered.
    """
    ids = np.asarray(ids, dtype=np.uint64)
    u = uniform_rows(rng.child_keys(ids), sum(spec.widths[:-1]))
    return masks_from_uniforms(spec, keep_probs, u)


def sample_multiplicative_gaussian_mask(dim, sigma, rng):
    """Mask entries drawn from N(1, sigma^2)."""
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(dim)
    return 1.0 + sigma * rng.normal(dim)


def _row_mask(z, rows):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = np.broadcast_to(z, (rows, z.shape[0]))
    return np.ascontiguousarray(z)


def forward_batch(spec, params, X, masks):
    """Outputs for every row of ``X`` (N x Q) under ``masks``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.input_dim:
        raise ContractError(f"input width {X.shape[1]} != Q={spec.input_dim}")
    masks.validate(spec, rows=X.shape[0])
    n = X.shape[0]
    h = np.ascontiguousarray(X)
    act = NONLINEARITIES[spec.nonlinearity]
    for i in range(spec.n_layers):
        w = np.ascontiguousarray(params.weights[i], dtype=np.float64)
        last = i == spec.n_layers - 1
        if last:
            b = params.output_bias if params.output_bias is not None else np.zeros(w.shape[1])
            h = _kernels.masked_layer(h, _row_mask(masks.masks[i], n), w,
                                      np.ascontiguousarray(b, dtype=np.float64), 0, 1.0)
        else:
            h = _kernels.masked_layer(h, _row_mask(masks.masks[i], n), w,
                                      np.ascontiguousarray(params.biases[i], dtype=np.float64),
                                      act, spec.feature_scale(i))
    return h


def forward(spec, params, masks, x):
    """Output vector for a single input vector ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("forward expects a single input vector; use forward_batch")
    return forward_batch(spec, params, x[None, :], masks)[0]


def weight_average_forward(spec, params, keep_probs, X):
    """Standard-dropout test-time prediction: weights scaled by p_i, no sampling."""
    return forward_batch(spec, scale_weights(params, normalize_keep_probs(spec, keep_probs)),
                         X, ones_masks(spec))


# ---------------------------------------------------------------- losses

def euclidean_loss(Y, Yhat):
    Y, Yhat = np.atleast_2d(Y), np.atleast_2d(Yhat)
    if Y.shape != Yhat.shape:
        raise ContractError(f"shape mismatch {Y.shape} vs {Yhat.shape}")
    return float(np.sum((Y - Yhat) ** 2) / (2.0 * Y.shape[0]))


def check_labels(labels, d):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ContractError("labels must be a 1-D integer vector")
    if labels.size and (labels.min() < 1 or labels.max() > d):
        raise ContractError(f"labels must lie in [1, {d}]")
    return labels


def log_softmax_true(logits, labels):
    """log p_hat[n, c_n] for 1-based labels."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = check_labels(labels, logits.shape[1])
    if labels.shape[0] != logits.shape[0]:
        raise ContractError("one label per row of logits required")
    lse = logsumexp(logits, axis=1)
    return logits[np.arange(logits.shape[0]), labels - 1] - lse


def softmax_loss(logits, labels):
    return float(-np.mean(log_softmax_true(logits, labels)))


# ---------------------------------------------------------------- cost

@dataclass(frozen=True)
class HyperParams:
    """Precision, weight decays and prior scales.

    ``weight_decay`` and ``bias_decay`` may be scalars or per-layer sequences.
    The output bias, when present, is never decayed.
    """

    tau: float = 1.0
    weight_decay: object = 0.0
    bias_decay: object = 0.0
    lengthscale: float = 1.0
    bias_lengthscale: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError(f"tau must be > 0, got {self.tau}")
        if np.any(np.asarray(self.weight_decay) < 0) or np.any(np.asarray(self.bias_decay) < 0):
            raise DomainError("weight decays must be >= 0")
        if not (self.lengthscale > 0 and self.bias_lengthscale > 0):
            raise DomainError("length-scales must be > 0")
        if self.sigma < 0:
            raise DomainError("sigma must be >= 0")

    def weight_decays(self, spec):
        return tuple(float(v) for v in np.broadcast_to(np.asarray(self.weight_decay, dtype=float), (spec.n_layers,)))

    def bias_decays(self, spec):
        return tuple(float(v) for v in np.broadcast_to(np.asarray(self.bias_decay, dtype=float), (len(spec.hidden),)))


@dataclass
class Dataset:
    """Inputs ``X`` with either regression targets ``Y`` or 1-based ``labels``."""

    X: np.ndarray
    Y: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        if (self.Y is None) == (self.labels is None):
            raise ContractError("give exactly one of Y (regression) or labels (classification)")
        if self.Y is not None:
            self.Y = np.asarray(self.Y, dtype=np.float64)
            if self.Y.ndim == 1:
                self.Y = self.Y[:, None]
            if self.Y.shape[0] != self.X.shape[0]:
                raise ContractError("X and Y row counts differ")
        else:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.X.shape[0],):
                raise ContractError("one label per input row required")

    @property
    def task(self):
        return "regression" if self.Y is not None else "classification"

    @property
    def n(self):
        return self.X.shape[0]

    def subset(self, idx):
        if self.Y is not None:
            return Dataset(self.X[idx], Y=self.Y[idx])
        return Dataset(self.X[idx], labels=self.labels[idx])


def decay_penalty(spec, params, hyper):
    total = 0.0
    for lam, w in zip(hyper.weight_decays(spec), params.weights):
        total += lam * float(np.sum(w * w))
    for lam, b in zip(hyper.bias_decays(spec), params.biases):
        total += lam * float(np.sum(b * b))
    return total


def data_loss(spec, data, outputs):
    if data.task == "regression":
        if data.Y.shape[1] != spec.output_dim:
            raise ContractError(f"targets have {data.Y.shape[1]} columns, D={spec.output_dim}")
        return euclidean_loss(data.Y, outputs)
    check_labels(data.labels, spec.output_dim)
    return softmax_loss(outputs, data.labels)


def dropout_cost(spec, params, hyper, data, masks):
    """E + sum_i lambda_i ||M_i||^2 + sum_i lambda_b,i ||m_i||^2."""
    outputs = forward_batch(spec, params, data.X, masks)
    return data_loss(spec, data, outputs) + decay_penalty(spec, params, hyper)


def gradients(spec, params, hyper, data, masks):
    """Cost and its exact gradient (a ParamSet) for fixed masks."""
    X = data.X
    n = X.shape[0]
    masks.validate(spec, rows=n)
    zs = [np.asarray(z, dtype=np.float64) for z in masks.masks]
    inputs, pres = [], []
    h = X
    for i in range(spec.n_layers):
        u = h * zs[i]
        a = u @ params.weights[i]
        last = i == spec.n_layers - 1
        if not last:
            a = a + params.biases[i]
        elif params.output_bias is not None:
            a = a + params.output_bias
        inputs.append(u)
        pres.append(a)
        if not last:
            h = activate(a, spec.nonlinearity) * spec.feature_scale(i)
    out = pres[-1]

    if data.task == "regression":
        loss = euclidean_loss(data.Y, out)
        g = (out - data.Y) / n
    else:
        labels = check_labels(data.labels, spec.output_dim)
        loss = softmax_loss(out, labels)
        prob = np.exp(out - logsumexp(out, axis=1)[:, None])
        prob[np.arange(n), labels - 1] -= 1.0
        g = prob / n

    wd, bd = hyper.weight_decays(spec), hyper.bias_decays(spec)
    gw = [None] * spec.n_layers
    gb = [None] * len(spec.hidden)
    gob = g.sum(axis=0) if params.output_bias is not None else None
    for i in range(spec.n_layers - 1, -1, -1):
        if i < spec.n_layers - 1:
            g = g * spec.feature_scale(i) * activate_grad(pres[i], spec.nonlinearity)
            gb[i] = g.sum(axis=0) + 2.0 * bd[i] * params.biases[i]
        gw[i] = inputs[i].T @ g + 2.0 * wd[i] * params.weights[i]
        if i > 0:
            g = (g @ params.weights[i].T) * zs[i]
    cost = loss + decay_penalty(spec, params, hyper)
    return cost, ParamSet(gw, gb, gob)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class Schedule:
    """lr(t) = base_lr * (1 + gamma * t) ** (-power), with momentum."""

    base_lr: float = 0.01
    gamma: float = 1e-4
    power: float = 0.25
    momentum: float = 0.9
    iterations: int = 1000

    def lr(self, t):
        return self.base_lr * (1.0 + self.gamma * t) ** (-self.power)


@dataclass
class TrainResult:
    params: ParamSet
    losses: np.ndarray
    trace: list = field(default_factory=list)


def minibatch_indices(n, m, rng):
    if m == n:
        return np.arange(n)
    return np.sort(np.argsort(rng.uniform(n), kind="stable")[:m])


def sgd_train(spec, params, hyper, data, schedule, batch_size, keep_probs, rng,
              record_every=0):
    """Momentum SGD on the mini-batch dropout cost.

    Each iteration ``t`` draws from ``rng.child(t)``: a mini-batch of
    ``batch_size`` points without replacement, then fresh masks per selected
    point. Returns the final parameters and the per-iteration mini-batch cost.
    ``record_every > 0`` also stores parameter snapshots.
    """
    n = data.n
    if not 0 < batch_size <= n:
        raise ContractError(f"minibatch size must be in [1, {n}], got {batch_size}")
    keep_probs = normalize_keep_probs(spec, keep_probs)
    params = params.copy()
    params.validate(spec)
    velocity = [np.zeros_like(a) for a in params.arrays()]
    losses = np.empty(schedule.iterations)
    trace = []
    for t in range(schedule.iterations):
        it = rng.child(t)
        idx = minibatch_indices(n, batch_size, it)
        masks = sample_point_masks(spec, keep_probs, it, idx)
        cost, grad = gradients(spec, params, hyper, data.subset(idx), masks)
        if not np.isfinite(cost):
            raise FloatingPointError(f"non-finite training cost at iteration {t}")
        losses[t] = cost
        lr = schedule.lr(t)
        arrays = params.arrays()
        for a, v, g in zip(arrays, velocity, grad.arrays()):
            v *= schedule.momentum
            v -= lr * g
            a += v
        if record_every and (t + 1) % record_every == 0:
            trace.append(params.copy())
    return TrainResult(params, losses, trace)


def with_scaling(spec, scale_features):
    return replace(spec, scale_features=scale_features)


__all__ = [
    "NetworkSpec", "ParamSet", "MaskSet", "HyperParams", "Dataset", "Schedule",
    "TrainResult", "forward", "forward_batch", "euclidean_loss", "softmax_loss",
    "dropout_cost", "gradients", "sgd_train", "sample_multiplicative_gaussian_mask",
    "sample_point_masks", "init_params", "scale_weights", "weight_average_forward",
    "RngState",
]
