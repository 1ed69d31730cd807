import numpy as np
import pytest

from sfe.metrics import downsample_embedder, fid, kid, mmd2_unbiased


def oracle_mmd2(x, y):
    """Direct O(n^2) kernel sums with explicit loops."""
    m = x.shape[0]
    dim = x.shape[1]

    def k(u, v):
        return (float(u @ v) / dim + 1.0) ** 3

    sum_xx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j)
    sum_yy = sum(k(y[i], y[j]) for i in range(m) for j in range(m) if i != j)
    sum_xy = sum(k(x[i], y[j]) for i in range(m) for j in range(m) if i != j)
    return (sum_xx + sum_yy - 2.0 * sum_xy) / (m * (m - 1))


class TestFid:
    def test_identical_sets_score_zero(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(200, 8))
        assert abs(fid(a, a).value) <= 1e-6

    def test_gaussian_mean_shift_oracle(self):
        # analytic value for N(0, I) vs N(mu, I) is |mu|^2
        rng = np.random.default_rng(1)
        mu = np.array([1.0, -0.5, 0.25, 0.8])
        a = rng.normal(size=(10_000, 4))
        b = rng.normal(size=(10_000, 4)) + mu
        expected = float(mu @ mu)
        assert fid(a, b).value == pytest.approx(expected, rel=0.05)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dims differ"):
            fid(np.zeros((4, 3)), np.zeros((4, 2)))

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            fid(np.zeros((1, 3)), np.zeros((4, 3)))

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(300, 6))
        b = rng.normal(size=(300, 6)) * 1.3 + 0.2
        assert fid(a, b).value == pytest.approx(fid(b, a).value, abs=1e-6)

    def test_translation_invariant(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(300, 5))
        b = rng.normal(size=(300, 5)) + 0.7
        shift = rng.normal(size=5) * 10
        assert fid(a + shift, b + shift).value == pytest.approx(fid(a, b).value, abs=1e-6)

    def test_singular_covariance_jitter_recorded(self):
        # rank-deficient embeddings: a constant column
        rng = np.random.default_rng(4)
        a = np.concatenate([rng.normal(size=(50, 2)), np.zeros((50, 2))], axis=1)
        b = np.concatenate([rng.normal(size=(50, 2)), np.zeros((50, 2))], axis=1)
        result = fid(a, b)
        assert np.isfinite(result.value)


class TestKid:
    def test_identical_sets_near_zero(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(150, 6))
        assert abs(kid(a, a, subset_size=100, subsets=5)) <= 1e-3

    def test_separated_clusters_positive(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(100, 4))
        b = rng.normal(size=(100, 4)) + 25.0
        assert kid(a, b, subset_size=50, subsets=3) > 0

    def test_matches_bruteforce_kernel_sum(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(100, 5))
        b = rng.normal(size=(100, 5)) + 0.3
        # subset == whole set makes the estimator deterministic
        fast = kid(a, b, subset_size=100, subsets=1)
        assert abs(fast - oracle_mmd2(a, b)) <= 1e-9
        assert abs(mmd2_unbiased(a, b) - oracle_mmd2(a, b)) <= 1e-9

    def test_subset_size_validated(self):
        a = np.zeros((10, 3))
        with pytest.raises(ValueError, match="subset_size"):
            kid(a, a, subset_size=20)


class TestEmbedder:
    def test_shape_and_determinism(self):
        rng = np.random.default_rng(0)
        images = rng.random((6, 32, 32, 3))
        emb = downsample_embedder(images)
        assert emb.shape == (6, 192)
        assert np.array_equal(emb, downsample_embedder(images))

    def test_constant_image_embeds_to_constant(self):
        images = np.full((2, 16, 16, 3), 0.25)
        emb = downsample_embedder(images)
        assert np.allclose(emb, 0.25)

    def test_side_must_divide(self):
        with pytest.raises(ValueError):
            downsample_embedder(np.zeros((1, 30, 30, 3)))
