"""Tests for the seed-derivation and random-stream layer.

The whole harness leans on this module for reproducibility, so the tests
pin exact frozen values (so a refactor cannot silently change streams)
plus distributional sanity checks.
"""

import numpy as np
import pytest

from lupi_lab import rng

# Frozen anchors: first draws from known seeds, captured at v0.1.0.
# If these change, every experiment in the package changes identity.
FROZEN_DERIVE = {
    (0, (1,)): 627405149472732430,
    (0, (1, 2)): 13752686981196726545,
}
FROZEN_UNIFORM_12345 = [0.6463801884227345, 0.7742675977164786, 0.7864362639285933, 0.15959668272284822]
FROZEN_NORMAL_12345 = [0.32722577228910527, 0.9281738781371801, -1.4042753067307145, 1.4544082425012808]


class TestDeriveSeed:
    def test_no_parts_is_identity(self):
        """With no parts the seed passes through unchanged."""
        assert rng.derive_seed(7) == 7
        assert rng.derive_seed(0) == 0

    def test_frozen_values(self):
        """Derived seeds are pinned; changing the mixer changes every run."""
        for (seed, parts), want in FROZEN_DERIVE.items():
            assert rng.derive_seed(seed, *parts) == want

    def test_distinct_streams(self):
        """Different part tuples give different seeds (no collisions in a
        small grid)."""
        seen = set()
        for seed in range(4):
            for a in range(8):
                for b in range(8):
                    seen.add(rng.derive_seed(seed, a, b))
        assert len(seen) == 4 * 8 * 8

    def test_order_sensitive(self):
        assert rng.derive_seed(0, 1, 2) != rng.derive_seed(0, 2, 1)

    def test_64_bit_range(self):
        for parts in [(1,), (2, 3), (10**9, 10**9)]:
            s = rng.derive_seed(123, *parts)
            assert 0 <= s < 2**64


class TestStream:
    def test_same_key_same_draws(self):
        a = rng.stream(42, 1).random(16)
        b = rng.stream(42, 1).random(16)
        np.testing.assert_array_equal(a, b)

    def test_different_keys_differ(self):
        a = rng.stream(42, 1).random(16)
        b = rng.stream(42, 2).random(16)
        assert not np.array_equal(a, b)

    def test_frozen_uniform(self):
        got = rng.uniform(rng.stream(12345), 4)
        np.testing.assert_allclose(got, FROZEN_UNIFORM_12345, rtol=0, atol=1e-15)


class TestNormal:
    def test_frozen_values(self):
        got = rng.normal(rng.stream(12345), 4)
        np.testing.assert_allclose(got, FROZEN_NORMAL_12345, rtol=0, atol=1e-15)

    def test_box_muller_construction(self):
        """normal() is exactly Box-Muller over the uniform stream: the first
        m=ceil(n/2) uniforms give radii, the next m give angles."""
        n = 7
        m = (n + 1) // 2
        u = rng.uniform(rng.stream(99), 2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))
        theta = 2.0 * np.pi * u[m:]
        want = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        got = rng.normal(rng.stream(99), n)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)

    def test_moments(self):
        """Sample mean ~ 0 and variance ~ 1 at n=200000."""
        x = rng.normal(rng.stream(7), 200000)
        assert abs(x.mean()) < 0.01
        assert abs(x.var() - 1.0) < 0.02

    def test_shapes(self):
        assert rng.normal(rng.stream(1), (3, 4)).shape == (3, 4)
        assert np.isscalar(float(rng.normal(rng.stream(1))))

    def test_odd_length(self):
        """Odd sizes drop the last of the generated pair, nothing else."""
        a = rng.normal(rng.stream(5), 9)
        assert a.shape == (9,)
        assert np.all(np.isfinite(a))


class TestBernoulli:
    def test_p_zero_and_one(self):
        g = rng.stream(3)
        assert not rng.bernoulli(g, 0.0, 100).any()
        assert rng.bernoulli(rng.stream(3), 1.0, 100).all()

    def test_mean_concentrates(self):
        x = rng.bernoulli(rng.stream(11), 0.3, 100000)
        assert abs(x.mean() - 0.3) < 0.01
        assert set(np.unique(x)) <= {0.0, 1.0}

    def test_matches_uniform_threshold(self):
        """bernoulli(p) is exactly 1{u < p} over the same stream."""
        u = rng.uniform(rng.stream(21), 50)
        want = (u < 0.4).astype(float)
        got = rng.bernoulli(rng.stream(21), 0.4, 50)
        np.testing.assert_array_equal(got, want)
