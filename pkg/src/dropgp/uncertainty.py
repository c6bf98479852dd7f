"""MC-dropout predictive moments, exact mask enumeration, log-likelihood and calibration."""
from dataclasses import dataclass
import csv
import math

import numpy as np

from dropgp.network import (
    ContractError,
    forward_batch,
    masks_from_uniforms,
    normalize_keep_probs,
    split_mask_block,
    weight_average_forward,
)
from dropgp.numerics import DomainError, RngState, logsumexp, uniform_rows

LOG_2PI = math.log(2.0 * math.pi)
MAX_ENUM_BITS = 24


@dataclass(frozen=True)
class McConfig:
    samples: int
    seed: int = 0
    keep_probs: object = 1.0
    tau: float = 1.0
    stream: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ContractError(f"need at least one MC sample, got {self.samples}")
        if not self.tau > 0:
            raise DomainError(f"tau must be > 0, got {self.tau}")


@dataclass
class PredictiveSummary:
    """Predictive mean, second moment (with the tau^-1 I term) and covariance."""

    mean: np.ndarray
    second_moment: np.ndarray
    covariance: np.ndarray
    samples: np.ndarray = None
    mean_stderr: np.ndarray = None
    covariance_stderr: np.ndarray = None

    @property
    def std(self):
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0))


def summarize_samples(samples, tau, keep=False):
    """Moment estimates from a T x D block of sampled outputs."""
    Y = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    T, D = Y.shape
    mean = Y.mean(axis=0)
    outer = Y.T @ Y / T
    second = 0.5 * (outer + outer.T) + np.eye(D) / tau
    # centred form of second - mean'mean: exact when all samples agree
    c = Y - mean
    cov = c.T @ c / T
    cov = 0.5 * (cov + cov.T) + np.eye(D) / tau
    mean_se = cov_se = None
    if T > 1:
        mean_se = c.std(axis=0, ddof=1) / math.sqrt(T)
        prods = c[:, :, None] * c[:, None, :]
        cov_se = prods.std(axis=0, ddof=1) / math.sqrt(T)
    return PredictiveSummary(mean, second, cov, Y if keep else None, mean_se, cov_se)


def sample_outputs(spec, params, cfg, X, point_ids=None):
    """T sampled outputs per input row: array (N, T, D).

    Sample t of point n uses masks from stream child(n).child(t) of
    (cfg.seed, cfg.stream), so every sample and point is independent and the
    result does not depend on batching.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, T = X.shape[0], cfg.samples
    point_ids = np.arange(n) if point_ids is None else np.asarray(point_ids)
    keep = normalize_keep_probs(spec, cfg.keep_probs)
    root = RngState(cfg.seed, cfg.stream)
    bits = sum(spec.widths[:-1])
    out = np.empty((n, T, spec.output_dim))
    ts = np.arange(T, dtype=np.uint64)
    rows_per_chunk = max(1, 200_000 // max(1, bits))
    for r in range(n):
        keys = root.child(int(point_ids[r])).child_keys(ts)
        for s in range(0, T, rows_per_chunk):
            k = keys[s:s + rows_per_chunk]
            masks = masks_from_uniforms(spec, keep, uniform_rows(k, bits))
            xr = np.broadcast_to(X[r], (len(k), X.shape[1]))
            out[r, s:s + len(k)] = forward_batch(spec, params, xr, masks)
    return out


def mc_predict(spec, params, cfg, x, keep_samples=False, point_id=0):
    """MC-dropout predictive summary for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    Y = sample_outputs(spec, params, cfg, x[None, :], [point_id])[0]
    return summarize_samples(Y, cfg.tau, keep=keep_samples)


def mc_predict_batch(spec, params, cfg, X):
    """Per-row means and standard deviations, plus the raw samples."""
    S = sample_outputs(spec, params, cfg, X)
    means = S.mean(axis=1)
    var = ((S - means[:, None, :]) ** 2).mean(axis=1) + 1.0 / cfg.tau
    return means, np.sqrt(np.maximum(var, 0.0)), S


def standard_dropout_predict(spec, params, keep_probs, X):
    """Weight-averaging prediction (no sampling), for comparison with MC dropout."""
    return weight_average_forward(spec, params, keep_probs, X)


def enumerate_masks_oracle(spec, params, keep_probs, tau, x, return_total=False):
    """Exact predictive moments by summing over every mask configuration."""
    if not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau}")
    keep = normalize_keep_probs(spec, keep_probs)
    bits = sum(spec.widths[:-1])
    if bits > MAX_ENUM_BITS:
        raise ContractError(f"{bits} mask bits exceed the enumeration budget of {MAX_ENUM_BITS}")
    x = np.asarray(x, dtype=np.float64)
    D = spec.output_dim
    p_bit = np.concatenate([np.full(k, p) for k, p in zip(spec.widths[:-1], keep)])
    shifts = np.arange(bits, dtype=np.int64)
    total = 0.0
    s1 = np.zeros(D)
    s2 = np.zeros((D, D))
    block = 1 << 14
    for start in range(0, 1 << bits, block):
        idx = np.arange(start, min(start + block, 1 << bits), dtype=np.int64)
        z = ((idx[:, None] >> shifts) & 1).astype(np.float64)
        w = np.prod(np.where(z == 1.0, p_bit, 1.0 - p_bit), axis=1)
        live = w > 0
        if not live.any():
            continue
        z, w = z[live], w[live]
        masks = split_mask_block(spec, z, keep)
        Y = forward_batch(spec, params, np.broadcast_to(x, (len(w), x.shape[0])), masks)
        total += w.sum()
        s1 += w @ Y
        s2 += (Y * w[:, None]).T @ Y
    s2 = 0.5 * (s2 + s2.T)
    second = s2 + np.eye(D) / tau
    cov = second - np.outer(s1, s1)
    summary = PredictiveSummary(s1, second, 0.5 * (cov + cov.T))
    return (summary, total) if return_total else summary


def predictive_log_likelihood(samples, y, tau):
    """log((1/T) sum_t N(y; y_hat_t, tau^-1 I_D)) via logsumexp."""
    if not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau}")
    Y = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if Y.shape[1] != y.shape[0]:
        raise ContractError("sample width must match the target width")
    T, D = Y.shape
    sq = np.sum((y - Y) ** 2, axis=1)
    return (logsumexp(-0.5 * tau * sq) - math.log(T)
            - 0.5 * D * LOG_2PI - 0.5 * D * math.log(1.0 / tau))


# ---------------------------------------------------------------- calibration

@dataclass
class CalibrationTable:
    """Sorted per-point predictive standard deviations from the training set."""

    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=np.float64).ravel())
        if v.size == 0:
            raise ContractError("calibration table is empty")
        if v[0] < 0:
            raise DomainError("standard deviations must be non-negative")
        self.values = v

    @property
    def count(self):
        return self.values.size

    @classmethod
    def from_stds(cls, stds):
        """One scalar per point: the mean of its per-output standard deviations."""
        s = np.atleast_2d(np.asarray(stds, dtype=np.float64))
        return cls(s.mean(axis=1))


def calibration_percentile(table, new_std):
    """Empirical CDF of ``new_std`` against the table, linear between order statistics.

    Equals (#entries <= new_std)/count at every table value and interpolates
    linearly between consecutive distinct values; 0 below the smallest entry
    and 1 at or above the largest.
    """
    if new_std < 0:
        raise DomainError("standard deviation must be non-negative")
    v, n = table.values, table.count
    i = int(np.searchsorted(v, new_std, side="right"))
    if i == 0:
        return 0.0
    if i == n:
        return 1.0
    lo, hi = v[i - 1], v[i]
    j = int(np.searchsorted(v, hi, side="right"))
    return float((i + (new_std - lo) / (hi - lo) * (j - i)) / n)


def write_predictions_csv(path, means, stds, percentiles=None, loglik=None, samples=None):
    means = np.atleast_2d(means)
    D = means.shape[1]
    header = ["id"] + [f"mean_{d}" for d in range(D)] + [f"std_{d}" for d in range(D)]
    if percentiles is not None:
        header.append("percentile")
    if loglik is not None:
        header.append("loglik")
    if samples is not None:
        header += [f"sample_{t}_{d}" for t in range(samples.shape[1]) for d in range(D)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n in range(means.shape[0]):
            row = [n] + [repr(float(v)) for v in means[n]] + [repr(float(v)) for v in stds[n]]
            if percentiles is not None:
                row.append(repr(float(percentiles[n])))
            if loglik is not None:
                row.append(repr(float(loglik[n])))
            if samples is not None:
                row += [repr(float(v)) for v in samples[n].ravel()]
            w.writerow(row)
