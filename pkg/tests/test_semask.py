import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sfe.semask import (
    EMPTY_RAY,
    club_labels,
    composite_weights,
    composite_weights_torch,
    group_points,
    label_intersections,
    manifold_labels_torch,
    semantic_of_manifold,
)


def oracle_weights(sigmas, start):
    """Independent transmittance loop materializing every T and alpha."""
    weights = []
    for j in range(start, len(sigmas)):
        transmittance = 1.0
        for i in range(start, j):
            transmittance *= 1.0 - sigmas[i]
        weights.append(transmittance * sigmas[j])
    residual = 1.0
    for i in range(start, len(sigmas)):
        residual *= 1.0 - sigmas[i]
    return np.array(weights), residual


def oracle_label(sigmas, sem_probs, start):
    """Brute-force class accumulation, same floating-point order."""
    num_classes = sem_probs.shape[1]
    acc = np.zeros(num_classes)
    for j in range(start, len(sigmas)):
        transmittance = 1.0
        for i in range(start, j):
            transmittance *= 1.0 - sigmas[i]
        weight = transmittance * sigmas[j]
        for c in range(num_classes):
            acc[c] += weight * sem_probs[j, c]
    return int(np.argmax(acc))


class TestCompositeWeights:
    def test_opaque_first_surface(self):
        weights, residual = composite_weights([1.0, 0.3, 0.9])
        assert weights[0] == 1.0
        assert np.all(weights[1:] == 0.0)
        assert residual == 0.0

    def test_empty_ray(self):
        weights, residual = composite_weights([0.0, 0.0, 0.0])
        assert np.all(weights == 0.0)
        assert residual == 1.0

    def test_matches_spec_example(self):
        weights, residual = composite_weights([0.6, 0.5, 1.0])
        ow, orr = oracle_weights(np.array([0.6, 0.5, 1.0]), 0)
        assert np.array_equal(weights, ow)
        assert residual == orr
        assert np.allclose(weights, [0.6, 0.2, 0.2])
        assert residual == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            composite_weights([1.5])
        with pytest.raises(ValueError):
            composite_weights([-0.1])

    def test_bad_start_rejected(self):
        with pytest.raises(ValueError):
            composite_weights([0.5], start=1)

    @given(
        st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=10),
        st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_normalization_and_monotonicity(self, sigmas, data):
        start = data.draw(st.integers(min_value=0, max_value=len(sigmas) - 1))
        weights, residual = composite_weights(sigmas, start)
        assert abs(weights.sum() + residual - 1.0) < 1e-12
        # running transmittance never increases
        running = np.cumprod(1.0 - np.asarray(sigmas)[start:])
        assert np.all(np.diff(running) <= 1e-15)


class TestSemanticOfManifold:
    def setup_method(self):
        self.sigmas = np.array([0.6, 0.5, 1.0])
        self.probs = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])

    def test_start_zero_prefers_first_class(self):
        # accumulations (0.6, 0.4)
        assert semantic_of_manifold(self.sigmas, self.probs, 0) == 0
        assert oracle_label(self.sigmas, self.probs, 0) == 0

    def test_start_one_prefers_second_class(self):
        # accumulations (0, 1.0)
        assert semantic_of_manifold(self.sigmas, self.probs, 1) == 1
        assert oracle_label(self.sigmas, self.probs, 1) == 1

    def test_single_opaque_point(self):
        assert semantic_of_manifold([1.0], [[0.0, 0.0, 1.0]], 0) == 2

    def test_empty_gives_background_sentinel(self):
        assert semantic_of_manifold([], np.zeros((0, 3)), 0) == EMPTY_RAY

    def test_ties_break_to_lowest_index(self):
        label = semantic_of_manifold([0.5], [[0.5, 0.5]], 0)
        assert label == 0

    def test_oracle_equivalence_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            length = rng.integers(1, 9)
            classes = rng.integers(2, 5)
            sigmas = rng.random(length)
            probs = rng.dirichlet(np.ones(classes), size=length)
            start = int(rng.integers(0, length))
            assert semantic_of_manifold(sigmas, probs, start) == oracle_label(
                sigmas, probs, start
            )

    def test_zero_weight_points_cannot_change_labels(self):
        # points behind an opaque surface have zero weight
        sigmas = np.array([1.0, 0.7, 0.2])
        probs = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        base = semantic_of_manifold(sigmas, probs, 0)
        probs2 = probs.copy()
        probs2[1:] = [[0.3, 0.7], [0.9, 0.1]]
        assert semantic_of_manifold(sigmas, probs2, 0) == base


class TestGroupPoints:
    def test_single_class_field(self):
        sigmas = np.full(5, 0.5)
        probs = np.tile([0.0, 1.0, 0.0], (5, 1))
        grouping = group_points(sigmas, probs, clubbing=[0, 0, 1])
        assert np.all(grouping.group_labels == 0)
        assert len(grouping.collections[0]) == 5
        assert len(grouping.collections[1]) == 0

    def test_partition_contract(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            length = int(rng.integers(1, 9))
            sigmas = rng.random(length)
            probs = rng.dirichlet(np.ones(4), size=length)
            grouping = group_points(sigmas, probs, clubbing=[0, 1, 1, 2])
            indices = np.concatenate([c for c in grouping.collections])
            assert len(indices) == length
            assert len(np.unique(indices)) == length

    def test_identity_clubbing_equals_raw_labels(self):
        rng = np.random.default_rng(2)
        sigmas = rng.random(6)
        probs = rng.dirichlet(np.ones(3), size=6)
        grouping = group_points(sigmas, probs, clubbing=[0, 1, 2])
        assert np.array_equal(grouping.group_labels, label_intersections(sigmas, probs))


class TestTorchPath:
    def test_weights_match_numpy(self):
        rng = np.random.default_rng(3)
        sigmas = rng.random((32, 6))
        w_t, r_t = composite_weights_torch(torch.from_numpy(sigmas))
        for row in range(32):
            w_n, r_n = composite_weights(sigmas[row])
            assert np.allclose(w_t[row].numpy(), w_n, atol=1e-12)
            assert abs(r_t[row].item() - r_n) < 1e-12

    def test_labels_match_numpy_bitwise(self):
        rng = np.random.default_rng(4)
        sigmas = rng.random((64, 5))
        probs = rng.dirichlet(np.ones(4), size=(64, 5))
        labels = manifold_labels_torch(
            torch.from_numpy(sigmas), torch.from_numpy(probs)
        ).numpy()
        for row in range(64):
            expected = label_intersections(sigmas[row], probs[row])
            assert np.array_equal(labels[row], expected)

    def test_invalid_entries_ignored(self):
        sigmas = torch.tensor([[0.8, 0.9, 0.7]])
        probs = torch.tensor([[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]])
        valid = torch.tensor([[True, False, True]])
        labels = manifold_labels_torch(sigmas, probs, valid)
        # middle point carries no weight, so start-0 sees classes (0, 0)
        assert labels[0, 0].item() == 0

    def test_club_labels_keeps_sentinels(self):
        labels = torch.tensor([0, 2, -1, 1])
        clubbed = club_labels(labels, torch.tensor([0, 0, 1]))
        assert clubbed.tolist() == [0, 1, -1, 0]
