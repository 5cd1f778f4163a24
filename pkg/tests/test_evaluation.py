"""Distribution distance, score error, and report plumbing."""

import json

import numpy as np
import pytest

from ldla.errors import DomainError, NumericError, ShapeError, ValidationError
from ldla.evaluation import (
    EvalReport,
    FeatureStats,
    _clamped_sqrt_eigs,
    compute_stats,
    flatten_features,
    frechet_distance,
    mae_scores,
    mean_pool_features,
    merge_stats,
    split_reference_fid,
)

from .oracles import diagonal_frechet


def gaussian_stats(mu, sigma_diag, n=100):
    d = len(mu)
    return FeatureStats(
        mu=np.asarray(mu, dtype=np.float64),
        sigma=np.diag(np.asarray(sigma_diag, dtype=np.float64)),
        n=n,
    )


def random_images(rng, n, size=8):
    return [rng.random((size, size, 3)).astype(np.float32) for _ in range(n)]


class TestFeatureStats:
    def test_dimension_property(self):
        s = gaussian_stats([0, 1], [1, 1])
        assert s.dim == 2

    def test_needs_two_samples(self):
        with pytest.raises(DomainError):
            gaussian_stats([0.0], [1.0], n=1)

    def test_asymmetric_sigma_rejected(self):
        sigma = np.array([[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(ValidationError, match="symmetric"):
            FeatureStats(mu=np.zeros(2), sigma=sigma, n=10)

    def test_negative_definite_sigma_rejected(self):
        with pytest.raises(ValidationError):
            FeatureStats(mu=np.zeros(1), sigma=np.array([[-0.5]]), n=10)


class TestFrechetDistance:
    def test_identical_stats_give_zero(self):
        rng = np.random.default_rng(0)
        a = compute_stats(random_images(rng, 24), mean_pool_features(2))
        assert frechet_distance(a, a) < 1e-6

    def test_one_dimensional_closed_form_is_four(self):
        """Unit-variance Gaussians two apart: 2^2 + 1 + 1 - 2 = 4."""
        a = gaussian_stats([0.0], [1.0])
        b = gaussian_stats([2.0], [1.0])
        assert frechet_distance(a, b) == pytest.approx(4.0, abs=1e-6)

    def test_diagonal_case_matches_per_dimension_closed_form(self):
        mu1, v1 = [0.0, 1.0, -2.0], [1.0, 0.5, 2.0]
        mu2, v2 = [0.5, 0.0, 1.0], [2.0, 1.5, 0.25]
        a = gaussian_stats(mu1, v1)
        b = gaussian_stats(mu2, v2)
        expected = diagonal_frechet(mu1, v1, mu2, v2)
        assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a = compute_stats(random_images(rng, 20), mean_pool_features(2))
        b = compute_stats(random_images(rng, 20), mean_pool_features(2))
        d1 = frechet_distance(a, b)
        d2 = frechet_distance(b, a)
        assert abs(d1 - d2) < 1e-8
        assert d1 > 0

    def test_permutation_insensitive(self):
        rng = np.random.default_rng(2)
        imgs = random_images(rng, 30)
        ref = compute_stats(random_images(rng, 30), mean_pool_features(2))
        d1 = frechet_distance(compute_stats(imgs, mean_pool_features(2)), ref)
        shuffled = [imgs[i] for i in rng.permutation(len(imgs))]
        d2 = frechet_distance(compute_stats(shuffled, mean_pool_features(2)), ref)
        assert abs(d1 - d2) < 1e-10

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            frechet_distance(gaussian_stats([0], [1]), gaussian_stats([0, 0], [1, 1]))

    def test_correlated_covariances_nonneg_and_monotone(self):
        """Full (non-diagonal) covariances: distance stays >= 0 and grows
        as the mean gap widens."""
        base = np.array([[2.0, 0.8], [0.8, 1.0]])
        a = FeatureStats(mu=np.zeros(2), sigma=base, n=50)
        prev = -1.0
        for gap in (0.0, 0.5, 1.0, 2.0):
            b = FeatureStats(mu=np.full(2, gap), sigma=base.copy(), n=50)
            d = frechet_distance(a, b)
            assert d >= 0.0
            assert d >= prev
            prev = d

    def test_guard_rejects_truly_negative_eigenvalues(self):
        bad = np.array([[1.0, 0.0], [0.0, -1e-3]])
        with pytest.raises(NumericError):
            _clamped_sqrt_eigs(bad, "test matrix")

    def test_guard_clamps_rounding_noise(self):
        nearly = np.array([[1.0, 0.0], [0.0, -1e-9]])
        vals, _ = _clamped_sqrt_eigs(nearly, "test matrix")
        assert (vals >= 0).all()


class TestComputeAndMerge:
    def test_compute_matches_numpy_moments(self):
        rng = np.random.default_rng(3)
        imgs = random_images(rng, 16, size=4)
        stats = compute_stats(imgs, flatten_features)
        feats = np.stack([im.ravel() for im in imgs]).astype(np.float64)
        assert np.allclose(stats.mu, feats.mean(axis=0))
        assert np.allclose(stats.sigma, np.cov(feats, rowvar=False))
        assert stats.n == 16

    def test_fewer_than_two_images_rejected(self):
        rng = np.random.default_rng(4)
        with pytest.raises(DomainError):
            compute_stats(random_images(rng, 1), flatten_features)

    def test_merge_equals_full_recompute(self):
        """Sharded statistics pool exactly (within 1e-10)."""
        rng = np.random.default_rng(5)
        imgs = random_images(rng, 37, size=4)
        full = compute_stats(imgs, mean_pool_features(2))
        merged = merge_stats(
            compute_stats(imgs[:13], mean_pool_features(2)),
            compute_stats(imgs[13:], mean_pool_features(2)),
        )
        assert merged.n == full.n
        assert np.abs(merged.mu - full.mu).max() < 1e-10
        assert np.abs(merged.sigma - full.sigma).max() < 1e-10

    def test_merge_three_shards_associative_enough(self):
        rng = np.random.default_rng(6)
        imgs = random_images(rng, 30, size=4)
        f = mean_pool_features(2)
        full = compute_stats(imgs, f)
        m = merge_stats(
            merge_stats(compute_stats(imgs[:10], f), compute_stats(imgs[10:20], f)),
            compute_stats(imgs[20:], f),
        )
        assert np.abs(m.sigma - full.sigma).max() < 1e-10

    def test_merge_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            merge_stats(gaussian_stats([0], [1]), gaussian_stats([0, 0], [1, 1]))


class TestMae:
    def test_exact_values(self):
        assert mae_scores([0.5, 0.7], [0.5, 0.9]) == pytest.approx(0.1)
        assert mae_scores([0.0], [1.0]) == 1.0
        assert mae_scores([0.3], [0.3]) == 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            mae_scores([0.1], [0.1, 0.2])
        with pytest.raises(ShapeError):
            mae_scores([], [])

    def test_domain_checked(self):
        with pytest.raises(DomainError):
            mae_scores([1.5], [0.5])
        with pytest.raises(DomainError):
            mae_scores([0.5], [-0.1])


class TestSplitReference:
    def test_self_distance_is_small_but_positive(self):
        rng = np.random.default_rng(7)
        imgs = random_images(rng, 40)
        d = split_reference_fid(imgs, mean_pool_features(2), np.random.default_rng(0))
        assert 0 < d < 5.0

    def test_deterministic_under_rng(self):
        rng = np.random.default_rng(8)
        imgs = random_images(rng, 24)
        f = mean_pool_features(2)
        d1 = split_reference_fid(imgs, f, np.random.default_rng(3))
        d2 = split_reference_fid(imgs, f, np.random.default_rng(3))
        assert d1 == d2

    def test_too_few_images_rejected(self):
        rng = np.random.default_rng(9)
        with pytest.raises(DomainError):
            split_reference_fid(random_images(rng, 3), flatten_features, rng)


class TestExtractors:
    def test_mean_pool_dimension(self):
        f = mean_pool_features(4)
        rng = np.random.default_rng(10)
        v = f(rng.random((64, 64, 3)).astype(np.float32))
        assert v.shape == (48,)  # 4*4 blocks x 3 channels

    def test_mean_pool_constant_blocks(self):
        img = np.zeros((8, 8, 3), dtype=np.float32)
        img[:4, :4] = 1.0
        v = mean_pool_features(2)(img)
        assert v[0] == pytest.approx(1.0)
        assert v[-1] == pytest.approx(0.0)

    def test_flatten_features(self):
        img = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
        assert np.array_equal(flatten_features(img), img.ravel().astype(np.float64))


class TestEvalReport:
    def test_json_round_trip(self):
        r = EvalReport(fid=1.25, mae=0.07, split_reference=0.9, per_zone={"forehead": 2.0})
        data = json.loads(r.to_json())
        assert data["fid"] == 1.25
        assert data["per_zone"]["forehead"] == 2.0

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            EvalReport(fid=float("nan"))
        with pytest.raises(ValidationError):
            EvalReport(fid=1.0, mae=float("inf"))
