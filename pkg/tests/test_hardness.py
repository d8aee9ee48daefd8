import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailforge.hardness import (
    KMeansModel,
    curriculum_split,
    fit_kmeans,
    hardness_entropy,
    hardness_matrix,
    hardness_vector,
    load_kmeans,
    save_kmeans,
    split_by_entropy,
)


def exhaustive_two_means(points: np.ndarray) -> float:
    """Oracle: optimal 2-cluster inertia by enumerating every bipartition."""
    n = points.shape[0]
    best = math.inf
    for mask_bits in range(1, 2 ** (n - 1)):  # fix point 0 in cluster A
        mask = np.array([(mask_bits >> i) & 1 for i in range(n)], dtype=bool)
        cost = 0.0
        for side in (mask, ~mask):
            if side.any():
                group = points[side]
                cost += float(((group - group.mean(axis=0)) ** 2).sum())
        best = min(best, cost)
    return best


class TestFitKMeans:
    def test_k1_center_is_mean(self):
        pts = np.array([[0.0], [2.0], [7.0]])
        model = fit_kmeans(pts, 1, rng_seed=0)
        assert model.centers[0, 0] == pytest.approx(3.0, abs=1e-12)

    def test_two_well_separated_pairs(self):
        pts = np.array([[0.0], [1.0], [10.0], [11.0]])
        model = fit_kmeans(pts, 2, rng_seed=0)
        assert sorted(model.centers.ravel().tolist()) == pytest.approx([0.5, 10.5])
        assert model.inertia == pytest.approx(1.0, abs=1e-12)
        assert model.inertia == pytest.approx(exhaustive_two_means(pts), abs=1e-12)

    def test_duplicated_distinct_points_zero_inertia(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 0.0], [3.0, 4.0]])
        model = fit_kmeans(pts, 2, rng_seed=1)
        assert model.inertia == pytest.approx(0.0, abs=1e-12)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        pts = rng.standard_normal((40, 3))
        a = fit_kmeans(pts, 4, rng_seed=11)
        b = fit_kmeans(pts, 4, rng_seed=11)
        np.testing.assert_array_equal(a.centers, b.centers)
        assert a.inertia_history == b.inertia_history

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_kmeans(np.zeros((2, 3)), 5, rng_seed=0)

    def test_non_finite_rejected(self):
        pts = np.array([[0.0], [np.nan]])
        with pytest.raises(ValueError):
            fit_kmeans(pts, 1, rng_seed=0)

    def test_inertia_history_non_increasing(self):
        rng = np.random.default_rng(8)
        for seed in range(5):
            pts = rng.standard_normal((50, 4))
            model = fit_kmeans(pts, 6, rng_seed=seed)
            hist = np.array(model.inertia_history)
            assert np.all(np.diff(hist) <= 1e-9)

    def test_small_scale_matches_exhaustive_optimum(self):
        # plentiful restarts: tiny instances have shallow global basins
        rng = np.random.default_rng(2026)
        for trial in range(40):
            n = int(rng.integers(4, 9))
            dim = int(rng.integers(1, 4))
            pts = rng.standard_normal((n, dim)) * float(rng.uniform(0.5, 3.0))
            model = fit_kmeans(pts, 2, rng_seed=trial, n_init=100)
            oracle = exhaustive_two_means(pts)
            assert model.inertia == pytest.approx(oracle, rel=1e-9, abs=1e-9), (
                f"trial {trial}: lloyd {model.inertia} vs exhaustive {oracle}"
            )


class TestHardnessVector:
    def _model(self, centers):
        centers = np.asarray(centers, dtype=np.float64)
        return KMeansModel(centers=centers, iterations=1, inertia=0.0, seed=0,
                           inertia_history=(0.0,))

    def test_zero_distance_component(self):
        model = self._model([[0.0, 0.0], [10.0, 0.0]])
        h = hardness_vector(np.array([0.0, 0.0]), model)
        np.testing.assert_allclose(h, [0.0, 1.0], atol=1e-12)

    def test_equidistant(self):
        model = self._model([[-1.0], [1.0]])
        h = hardness_vector(np.array([0.0]), model)
        np.testing.assert_allclose(h, [0.5, 0.5], atol=1e-12)

    def test_hand_computed_quarters(self):
        model = self._model([[0.0, 0.0], [4.0, 0.0]])
        h = hardness_vector(np.array([1.0, 0.0]), model)
        np.testing.assert_allclose(h, [0.25, 0.75], atol=1e-12)

    def test_width_mismatch(self):
        model = self._model([[0.0, 0.0]])
        with pytest.raises(ValueError):
            hardness_vector(np.zeros(3), model)

    def test_degenerate_all_centers_equal(self):
        model = self._model([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
        h = hardness_vector(np.array([1.0, 1.0]), model)
        np.testing.assert_allclose(h, np.full(3, 1 / 3), atol=1e-15)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
    @settings(max_examples=40, deadline=None)
    def test_scale_invariance_and_l1(self, seed, scale):
        rng = np.random.default_rng(seed)
        k, w = int(rng.integers(2, 12)), int(rng.integers(1, 6))
        centers = rng.standard_normal((k, w))
        emb = rng.standard_normal(w)
        model = self._model(centers)
        scaled = self._model(centers * scale)
        h = hardness_vector(emb, model)
        h_scaled = hardness_vector(emb * scale, scaled)
        assert np.all(h >= 0)
        assert h.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(h, h_scaled, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        centers = rng.standard_normal((5, 4))
        emb = rng.standard_normal(4)
        h = hardness_vector(emb, self._model(centers))
        perm = rng.permutation(5)
        h_perm = hardness_vector(emb, self._model(centers[perm]))
        np.testing.assert_allclose(h_perm, h[perm], atol=1e-15)

    def test_matrix_matches_rowwise(self):
        rng = np.random.default_rng(4)
        centers = rng.standard_normal((6, 5))
        model = self._model(centers)
        embs = rng.standard_normal((20, 5))
        mat = hardness_matrix(embs, model)
        for i in range(20):
            np.testing.assert_allclose(mat[i], hardness_vector(embs[i], model), atol=1e-12)


class TestEntropy:
    def test_one_hot_zero(self):
        assert hardness_entropy(np.array([0.0, 1.0, 0.0])) == 0.0

    def test_uniform_max(self):
        k = 1200
        assert hardness_entropy(np.full(k, 1 / k)) == pytest.approx(math.log(1200), rel=1e-9)

    def test_hand_value(self):
        assert hardness_entropy(np.array([0.25, 0.75])) == pytest.approx(0.5623, abs=1e-4)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 50))
        h = rng.random(k)
        h /= h.sum()
        ent = hardness_entropy(h)
        assert 0.0 <= ent <= math.log(k) + 1e-12


class TestCurriculumSplit:
    def test_lower_median_split(self):
        easy, hard = split_by_entropy(np.array([0.0, 1.0, 2.0, 3.0]))
        assert easy.tolist() == [0, 1]
        assert hard.tolist() == [2, 3]

    def test_all_equal_goes_easy(self):
        easy, hard = split_by_entropy(np.full(5, 2.0))
        assert easy.tolist() == [0, 1, 2, 3, 4]
        assert hard.size == 0

    def test_pair(self):
        easy, hard = split_by_entropy(np.array([0.0, 5.0]))
        assert easy.tolist() == [0]
        assert hard.tolist() == [1]

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            split_by_entropy(np.array([]))

    def test_from_vectors(self):
        # rows: one-hot (entropy 0) and uniform (entropy ln 4)
        vecs = np.array([
            [1.0, 0.0, 0.0, 0.0],
            [0.25, 0.25, 0.25, 0.25],
            [1.0, 0.0, 0.0, 0.0],
            [0.25, 0.25, 0.25, 0.25],
        ])
        easy, hard = curriculum_split(vecs)
        assert easy.tolist() == [0, 2]
        assert hard.tolist() == [1, 3]

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            curriculum_split(np.array([[1.0, 0.0]]))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        pts = rng.standard_normal((30, 6))
        model = fit_kmeans(pts, 4, rng_seed=3)
        path = tmp_path / "km.emb"
        save_kmeans(model, path)
        back = load_kmeans(path)
        np.testing.assert_allclose(back.centers, model.centers, atol=1e-6)
        assert back.k == model.k
        assert back.seed == model.seed
        assert back.iterations == model.iterations
        assert back.inertia == pytest.approx(model.inertia)
        assert len(back.inertia_history) == len(model.inertia_history)
