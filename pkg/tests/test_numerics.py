import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dropgp.numerics import (
    DomainError,
    RngState,
    child_stream_ids,
    logsumexp,
    sample_bernoulli_vector,
    sample_gaussian_matrix,
    stream_key,
)

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def ref_mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def ref_uniforms(seed, stream, n):
    """Plain-integer reference for the counter-based stream."""
    key = ref_mix64(ref_mix64((seed + GAMMA) & MASK) ^ ref_mix64((stream + 2 * GAMMA) & MASK))
    return [(ref_mix64((key + (c + 1) * GAMMA) & MASK) >> 11) / 2.0 ** 53 for c in range(n)]


class TestStreams:
    def test_golden_values(self):
        # frozen: changing the generator breaks every recorded seed
        assert int(stream_key(0, 0)) == 9206327630398885983
        assert RngState(0, 0).uniform(3).tolist() == [0.8234569604494177, 0.3715128641352461, 0.9339188759033359]
        assert RngState(0, 0).normal(2).tolist() == [-1.2877195179090288, -1.0419445775603917]
        assert RngState(42, 7).uniform(2).tolist() == [0.4669206262790523, 0.8163930790152392]

    @pytest.mark.parametrize("seed,stream", [(0, 0), (42, 7), (2**64 - 1, 123456789)])
    def test_matches_integer_reference(self, seed, stream):
        assert RngState(seed, stream).uniform(8).tolist() == ref_uniforms(seed, stream, 8)

    def test_box_muller_cosine_branch(self):
        u = ref_uniforms(5, 3, 2)
        expected = math.sqrt(-2.0 * math.log(1.0 - u[0])) * math.cos(2.0 * math.pi * u[1])
        assert RngState(5, 3).normal(1)[0] == pytest.approx(expected, rel=1e-15)

    def test_counter_advances_without_overlap(self):
        r = RngState(9, 1)
        a = np.concatenate([r.uniform(2), r.uniform(3)])
        np.testing.assert_array_equal(a, RngState(9, 1).uniform(5))

    def test_children_distinct_and_reproducible(self):
        root = RngState(3, 1)
        np.testing.assert_array_equal(root.child(5).uniform(4), RngState(3, 1).child(5).uniform(4))
        assert not np.array_equal(root.child(5).uniform(4), root.child(6).uniform(4))
        ids = child_stream_ids(1, np.arange(1000))
        assert len(set(ids.tolist())) == 1000


class TestBernoulli:
    def test_degenerate(self, rng):
        np.testing.assert_array_equal(sample_bernoulli_vector(1.0, 4, rng), np.ones(4))
        np.testing.assert_array_equal(sample_bernoulli_vector(0.0, 4, rng), np.zeros(4))

    def test_half_mean(self):
        z = sample_bernoulli_vector(0.5, 10_000, RngState(7))
        assert abs(z.mean() - 0.5) <= 0.015
        assert set(np.unique(z)) <= {0.0, 1.0}

    @pytest.mark.parametrize("p", [-0.1, 1.5, float("nan")])
    def test_domain(self, rng, p):
        with pytest.raises(DomainError):
            sample_bernoulli_vector(p, 3, rng)


class TestGaussian:
    def test_zero_std(self, rng):
        np.testing.assert_array_equal(sample_gaussian_matrix(2, 2, 0.0, 0.0, rng), np.zeros((2, 2)))
        np.testing.assert_array_equal(sample_gaussian_matrix(3, 3, 5.0, 0.0, rng), np.full((3, 3), 5.0))

    def test_moments(self):
        x = sample_gaussian_matrix(1, 100_000, 0.0, 1.0, RngState(11))
        assert x.shape == (1, 100_000)
        assert abs(x.mean()) < 0.01
        assert abs(x.var() - 1.0) < 0.02

    def test_negative_std(self, rng):
        with pytest.raises(DomainError):
            sample_gaussian_matrix(2, 2, 0.0, -1.0, rng)


class TestLogsumexp:
    def test_examples(self):
        assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
        assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)
        assert logsumexp([-3.25]) == -3.25

    def test_empty(self):
        with pytest.raises(DomainError):
            logsumexp([])

    def test_axis(self):
        v = np.array([[0.0, 0.0], [700.0, -700.0]])
        np.testing.assert_allclose(logsumexp(v, axis=1), [math.log(2), 700.0], atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-700, 700), min_size=1, max_size=20), st.floats(-300, 300))
    def test_shift_invariance(self, v, c):
        assert logsumexp(np.array(v) + c) == pytest.approx(logsumexp(v) + c, abs=1e-12)


def test_matrix_associativity():
    r = RngState(2)
    for _ in range(20):
        A, B, C = (r.normal(25).reshape(5, 5) for _ in range(3))
        lhs, rhs = (A @ B) @ C, A @ (B @ C)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(lhs))
