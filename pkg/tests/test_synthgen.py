"""Tests for the synthetic generators.

Distributional checks use wide binomial/moment confidence intervals at
large n with fixed seeds; structural checks (bitwise regeneration, label
reconstruction from meta) are exact.
"""

import numpy as np
import pytest

from lupi_lab import synthgen
from lupi_lab.synthgen import (
    CorruptionRegime,
    LinearPIConfig,
    TripleDataset,
    gen_experiment1,
    gen_experiment3,
    gen_linear_pi,
    gen_tram_classification,
    gen_tram_regression,
    noise_free_target,
)


def assert_bitwise_equal(a: TripleDataset, b: TripleDataset):
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Z, b.Z)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.task == b.task


class TestTripleDataset:
    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            TripleDataset(np.zeros((3, 2)), np.zeros((2, 1)), np.zeros(3), "regression")

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            TripleDataset(np.array([[np.nan]]), np.zeros((1, 1)), np.zeros(1), "regression")

    def test_binary_labels_checked(self):
        with pytest.raises(ValueError):
            TripleDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.array([0.0, 0.5]), "binary")

    def test_subset(self):
        ds = gen_experiment1(20, d=4, seed=1)
        sub = ds.subset(np.arange(5))
        assert sub.n == 5 and sub.d_x == 4
        np.testing.assert_array_equal(sub.X, ds.X[:5])


class TestExperiment1:
    def test_label_rule_sign_determinism(self):
        """With the noise forced to zero, a strongly positive score gives
        label 1 and a negative one gives 0."""
        assert synthgen.exp1_label(np.array([5.0]), np.array([0.0])) == 1.0
        assert synthgen.exp1_label(np.array([-5.0]), np.array([0.0])) == 0.0

    def test_label_mean_balanced(self):
        """Symmetric process: mean label in [0.47, 0.53] at n=10000."""
        ds = gen_experiment1(10000, seed=7)
        assert 0.47 <= ds.y.mean() <= 0.53

    def test_shapes_and_task(self):
        ds = gen_experiment1(100, d=50, seed=3)
        assert ds.X.shape == (100, 50) and ds.Z.shape == (100, 1) and ds.y.shape == (100,)
        assert ds.task == "binary"

    def test_privileged_column_is_clean_score(self):
        """Z equals X @ alpha for the alpha stored in meta."""
        ds = gen_experiment1(50, d=10, seed=11)
        alpha = np.array(ds.meta["alpha"])
        np.testing.assert_array_equal(ds.Z[:, 0], ds.X @ alpha)

    def test_labels_reconstructible_from_meta(self):
        """y is exactly 1{z + eps > 0} over the named noise stream."""
        seed = 13
        ds = gen_experiment1(200, d=5, seed=seed)
        eps = synthgen.rng.normal(synthgen.rng.stream(seed, synthgen._TAG_EPS), 200)
        np.testing.assert_array_equal(ds.y, synthgen.exp1_label(ds.Z[:, 0], eps))

    def test_bitwise_regeneration(self):
        assert_bitwise_equal(gen_experiment1(64, seed=21), gen_experiment1(64, seed=21))

    def test_seeds_differ(self):
        a, b = gen_experiment1(64, seed=1), gen_experiment1(64, seed=2)
        assert not np.array_equal(a.X, b.X)

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            gen_experiment1(0)
        with pytest.raises(ValueError):
            gen_experiment1(5, d=0)


class TestExperiment3:
    def test_z_is_exact_column_subset(self):
        ds = gen_experiment3(100, d=20, j=4, seed=5)
        np.testing.assert_array_equal(ds.Z, ds.X[:, ds.meta["J"]])
        assert len(ds.meta["J"]) == 4
        assert len(set(ds.meta["J"])) == 4  # without replacement

    def test_labels_deterministic_given_z(self):
        ds = gen_experiment3(100, d=10, j=3, seed=6)
        alpha = np.array(ds.meta["alpha"])
        np.testing.assert_array_equal(ds.y, (ds.Z @ alpha > 0).astype(float))

    def test_sign_flip_flips_every_label(self):
        """Negating the J-columns of X negates <alpha, z>, so every label
        flips (score is never exactly zero)."""
        ds = gen_experiment3(500, d=10, j=3, seed=8)
        alpha = np.array(ds.meta["alpha"])
        flipped = ds.X.copy()
        flipped[:, ds.meta["J"]] *= -1.0
        y_flipped = (flipped[:, ds.meta["J"]] @ alpha > 0).astype(float)
        np.testing.assert_array_equal(y_flipped, 1.0 - ds.y)

    def test_bitwise_regeneration(self):
        assert_bitwise_equal(gen_experiment3(64, seed=31), gen_experiment3(64, seed=31))

    def test_j_out_of_range(self):
        with pytest.raises(ValueError):
            gen_experiment3(10, d=5, j=6)
        with pytest.raises(ValueError):
            gen_experiment3(10, d=5, j=0)


class TestTramRegression:
    def test_clean_subset_noise_variance(self):
        """Rows with z=0: y - sin(2*pi*x) is the N(0, 0.01) noise; sample
        variance lands in [0.008, 0.012] at n=10000."""
        ds = gen_tram_regression(10000, seed=41)
        clean = ds.Z[:, 0] == 0.0
        resid = ds.y[clean] - np.sin(2 * np.pi * ds.X[clean, 0])
        assert 0.008 <= resid.var() <= 0.012

    def test_corruption_rate(self):
        """Mean of z concentrates near p_corrupt = 0.3."""
        ds = gen_tram_regression(10000, seed=42)
        assert 0.28 <= ds.Z.mean() <= 0.32

    def test_p_zero_is_uncorrupted_process(self):
        """p_corrupt=0 degenerates to y = sin(2*pi*x) + eps."""
        ds = gen_tram_regression(5000, p_corrupt=0.0, noise_std=0.1, seed=43)
        assert not ds.Z.any()
        resid = ds.y - np.sin(2 * np.pi * ds.X[:, 0])
        assert abs(resid.mean()) < 0.01
        assert 0.008 <= resid.var() <= 0.012

    def test_conditional_mean_is_shrunk_sine(self):
        """E[y|x] = (1-p)*sin(2*pi*x): binned empirical means at n=100000
        track 0.7*sin with max deviation <= 0.02."""
        ds = gen_tram_regression(100000, seed=44)
        x = ds.X[:, 0]
        bins = np.linspace(0, 1, 21)
        which = np.clip(np.digitize(x, bins) - 1, 0, 19)
        worst = 0.0
        for b in range(20):
            m = which == b
            center = x[m].mean()
            dev = abs(ds.y[m].mean() - 0.7 * np.sin(2 * np.pi * center))
            worst = max(worst, dev)
        assert worst <= 0.02

    def test_x_range_and_task(self):
        ds = gen_tram_regression(1000, seed=45)
        assert ds.task == "regression"
        assert ds.X.min() >= 0.0 and ds.X.max() <= 1.0

    def test_bitwise_regeneration(self):
        assert_bitwise_equal(gen_tram_regression(64, seed=46), gen_tram_regression(64, seed=46))


class TestTramClassification:
    def test_deterministic_regime_forces_corrupted_labels(self):
        """v = 1: every z=1 row has score 1, hence label 1."""
        ds = gen_tram_classification(2000, CorruptionRegime("deterministic"), seed=51)
        assert ds.y[ds.Z[:, 0] == 1.0].min() == 1.0

    def test_cosine_regime_endpoint(self):
        """cos(2*pi*0) = 1, so a z=1 row at x ~ 0 scores ~ 1."""
        x = np.array([0.0])
        assert np.cos(2 * np.pi * x[0]) == 1.0
        # generator-level check: cosine v column equals cos(2*pi*x) on z=1 rows
        ds = gen_tram_classification(5000, CorruptionRegime("cosine"), seed=52)
        # reconstruct: P(y=1 | z=1, x) = clamp(cos(2*pi*x)); estimate near x=0
        m = (ds.Z[:, 0] == 1.0) & (np.abs(ds.X[:, 0] - 0.0) < 0.02)
        if m.sum() > 5:  # enough mass near the endpoint
            assert ds.y[m].mean() >= 0.8

    def test_uniform_regime_corrupted_rate(self):
        """P(y=1 | z=1) = E[clamp(Unif(-1,1), 0, 1)] = 1/4 by direct
        integration; empirical rate in [0.22, 0.28] at large n."""
        # numeric integration oracle of the clamped mean
        v = np.linspace(-1, 1, 2_000_001)
        oracle = np.clip(v, 0, 1).mean()
        assert abs(oracle - 0.25) < 1e-3
        ds = gen_tram_classification(20000, CorruptionRegime("uniform"), seed=53)
        rate = ds.y[ds.Z[:, 0] == 1.0].mean()
        assert 0.22 <= rate <= 0.28

    def test_bernoulli_regime_corrupted_rate(self):
        """v ~ Ber(0.7): P(y=1 | z=1) = 0.7."""
        ds = gen_tram_classification(20000, CorruptionRegime("bernoulli"), seed=54)
        rate = ds.y[ds.Z[:, 0] == 1.0].mean()
        assert 0.67 <= rate <= 0.73

    def test_labels_are_binary(self):
        ds = gen_tram_classification(500, CorruptionRegime("uniform"), seed=55)
        assert ds.task == "binary"
        assert set(np.unique(ds.y)) <= {0.0, 1.0}

    def test_bitwise_regeneration(self):
        r = CorruptionRegime("cosine", 0.4)
        assert_bitwise_equal(
            gen_tram_classification(64, r, seed=56), gen_tram_classification(64, r, seed=56)
        )

    def test_regime_validation(self):
        with pytest.raises(ValueError):
            CorruptionRegime("gaussian")
        with pytest.raises(ValueError):
            CorruptionRegime("uniform", p_corrupt=1.5)


class TestLinearPI:
    def cfg(self, **kw):
        base = dict(d_x=3, d_z=2, n=50, sigma=1.0,
                    w_star=(1.0, -2.0, 0.5), v_star=(0.3, 0.7), seed=61)
        base.update(kw)
        return LinearPIConfig(**base)

    def test_noiseless_identifiable(self):
        """sigma=0, v*=0: y = Xw* exactly and least squares recovers w*."""
        from lupi_lab import net

        cfg = self.cfg(sigma=0.0, v_star=(0.0, 0.0))
        ds = gen_linear_pi(cfg)
        np.testing.assert_allclose(ds.y, ds.X @ np.array(cfg.w_star), atol=1e-12)
        w = net.least_squares(ds.X, ds.y)
        np.testing.assert_allclose(w, cfg.w_star, atol=1e-8)

    def test_block_columns_nearly_orthonormal(self):
        """Sample correlations of [X|Z] columns stay small at n=10000."""
        ds = gen_linear_pi(self.cfg(n=10000, seed=62))
        W = np.hstack([ds.X, ds.Z])
        corr = np.corrcoef(W.T)
        off = corr - np.diag(np.diag(corr))
        assert np.abs(off).max() <= 0.05

    def test_invariant_n_bound(self):
        with pytest.raises(ValueError):
            self.cfg(n=6)  # d_x + d_z + 1 = 6 violates n > 6

    def test_vector_length_mismatch(self):
        with pytest.raises(ValueError):
            self.cfg(w_star=(1.0,))

    def test_d_z_zero_allowed(self):
        ds = gen_linear_pi(LinearPIConfig(d_x=2, d_z=0, n=10, sigma=0.5,
                                          w_star=(1.0, 1.0), v_star=(), seed=63))
        assert ds.Z.shape == (10, 0)

    def test_bitwise_regeneration(self):
        assert_bitwise_equal(gen_linear_pi(self.cfg()), gen_linear_pi(self.cfg()))


class TestNoiseFreeTarget:
    def test_anchor_points(self):
        assert noise_free_target(0.0) == 0.0
        assert noise_free_target(0.25) == pytest.approx(1.0, abs=1e-15)
        assert noise_free_target(0.5) == pytest.approx(0.0, abs=1e-15)

    def test_vectorized(self):
        x = np.array([0.0, 0.25, 0.5, 0.75])
        np.testing.assert_allclose(noise_free_target(x), [0, 1, 0, -1], atol=1e-12)


class TestDumpLoad:
    def test_roundtrip_bitwise(self, tmp_path):
        ds = gen_tram_regression(50, seed=71)
        p = tmp_path / "data.csv"
        synthgen.save_dataset(ds, p)
        back = synthgen.load_dataset(p)
        assert_bitwise_equal(ds, back)
        assert back.meta == ds.meta

    def test_header_layout(self, tmp_path):
        ds = gen_experiment3(5, d=4, j=2, seed=72)
        p = tmp_path / "data.csv"
        synthgen.save_dataset(ds, p)
        header = p.read_text().splitlines()[0]
        assert header == "x_0,x_1,x_2,x_3,z_0,z_1,y"
        assert (tmp_path / "data.csv.meta.json").exists()

    def test_load_rejects_scrambled_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,x_0\n1.0,2.0\n")
        (tmp_path / "bad.csv.meta.json").write_text('{"task": "regression", "meta": {}}')
        with pytest.raises(ValueError, match="header"):
            synthgen.load_dataset(p)

    def test_one_hot_labels_rejected(self, tmp_path):
        ds = TripleDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.eye(2), "multiclass")
        with pytest.raises(ValueError):
            synthgen.save_dataset(ds, tmp_path / "x.csv")
