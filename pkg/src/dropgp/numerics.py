"""Seeded counter-based sampling and stable reductions.

Matrices are plain float64 numpy arrays. Every random draw is a pure function
of ``(seed, stream, counter)``: the generator is the SplitMix64 output
function applied to ``key + (counter + 1) * GAMMA`` where ``key`` is derived
from the seed and stream id. Uniforms take the top 53 bits. Gaussians use the
cosine branch of Box-Muller, consuming two uniforms per draw:

    z = sqrt(-2 log(1 - u1)) * cos(2 pi u2)

Child streams are derived by hashing, so per-sample and per-point draws do not
depend on evaluation order.
"""
import numpy as np

from dropgp import _kernels
from dropgp._pykernels import GAMMA, mix64

_MASK64 = (1 << 64) - 1


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """Shapes or sizes violate an operation's preconditions."""


def _u64(v):
    return np.uint64(int(v) & _MASK64)


def stream_key(seed, stream):
    """Generator key for ``(seed, stream)``."""
    return stream_key_array(seed, [int(stream) & _MASK64])[0]


@np.errstate(over="ignore")
def child_stream_ids(stream, ids):
    """Stream ids of the children ``ids`` of ``stream`` (vectorised)."""
    ids = np.asarray(ids, dtype=np.uint64)
    return mix64(_u64(stream) ^ mix64(ids * GAMMA + np.uint64(0x632BE59BD9B4E019)))


class RngState:
    """Single-owner generator state: ``(seed, stream)`` plus a draw counter.

    Parallel consumers must use ``child`` (distinct stream ids) instead of
    sharing one state.
    """

    __slots__ = ("seed", "stream", "counter", "_key")

    def __init__(self, seed, stream=0, counter=0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self.counter = int(counter)
        self._key = stream_key(self.seed, self.stream)

    def __repr__(self):
        return f"RngState(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def child(self, index):
        sid = child_stream_ids(self.stream, [index])[0]
        return RngState(self.seed, int(sid))

    def child_keys(self, indices):
        """Keys of child streams, for drawing many independent rows at once."""
        sids = child_stream_ids(self.stream, indices)
        return stream_key_array(self.seed, sids)

    def uniform(self, n):
        out = _kernels.uniform_grid(np.array([self._key], dtype=np.uint64), self.counter, int(n))[0]
        self.counter += int(n)
        return out

    def normal(self, n):
        out = _kernels.normal_grid(np.array([self._key], dtype=np.uint64), self.counter, int(n))[0]
        self.counter += 2 * int(n)
        return out


@np.errstate(over="ignore")
def stream_key_array(seed, stream_ids):
    a = mix64(_u64(seed) + GAMMA)
    b = mix64(np.asarray(stream_ids, dtype=np.uint64) + GAMMA + GAMMA)
    return mix64(a ^ b)


def uniform_rows(keys, d, start=0):
    """One row of ``d`` uniforms per stream key."""
    return _kernels.uniform_grid(np.ascontiguousarray(keys, dtype=np.uint64), int(start), int(d))


def normal_rows(keys, d, start=0):
    """One row of ``d`` standard normals per stream key (2 counters per draw)."""
    return _kernels.normal_grid(np.ascontiguousarray(keys, dtype=np.uint64), int(start), int(d))


def check_probability(p, name="p"):
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {p}")
    return p


def sample_bernoulli_vector(p, dim, rng):
    """0/1 float vector with entries independently 1 with probability ``p``."""
    p = check_probability(p)
    if dim < 1:
        raise ContractError(f"dim must be >= 1, got {dim}")
    return (rng.uniform(dim) < p).astype(np.float64)


def sample_gaussian_matrix(rows, cols, mean, std, rng):
    if std < 0:
        raise DomainError(f"std must be >= 0, got {std}")
    if std == 0:
        return np.full((rows, cols), float(mean))
    return mean + std * rng.normal(rows * cols).reshape(rows, cols)


def logsumexp(values, axis=None):
    """log(sum(exp(values))) with max-shifting.

    With ``axis=None`` the input must be a non-empty vector and a float is
    returned; otherwise the reduction runs along ``axis``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("logsumexp of an empty vector")
    if axis is None:
        m = v.max()
        if not np.isfinite(m):
            return float(m)
        return float(m + np.log(np.exp(v - m).sum()))
    m = v.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.exp(v - m).sum(axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)
