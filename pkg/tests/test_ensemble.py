import numpy as np
import pytest

from divens.dataset import LabeledDataset, split, standardize, synth_blobs
from divens.ensemble import StackingModel, fit_stacking, member_probability_matrix, predict_ensemble
from divens.genome import random_genome
from divens.learner import TrainConfig, evaluate, train_models


class StubMember:
    """Fixed probability table keyed by row index (features carry the index)."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict_proba(self, features):
        idx = features[:, 0].astype(int)
        return self.probs[idx]


def indexed_dataset(labels):
    labels = np.asarray(labels, dtype=np.int64)
    features = np.arange(len(labels), dtype=np.float64)[:, None]
    return LabeledDataset(features=features, labels=labels, class_count=int(labels.max()) + 1)


class TestFitStacking:
    def test_single_perfect_member(self):
        labels = np.array([0, 1, 0, 1])
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.8, 0.2], [0.1, 0.9]])
        member = StubMember(probs)
        data = indexed_dataset(labels)
        stack = fit_stacking([member], data, iterations=50)
        profile = predict_ensemble([member], stack, data)
        assert profile.accuracy == 1.0

    def test_zero_iterations_is_soft_voting(self):
        labels = np.array([0, 1])
        a = StubMember(np.array([[0.9, 0.1], [0.6, 0.4]]))
        b = StubMember(np.array([[0.2, 0.8], [0.1, 0.9]]))
        data = indexed_dataset(labels)
        stack = fit_stacking([a, b], data, iterations=0)
        phi = member_probability_matrix([a, b], data.features)
        scores = stack.scores(phi)
        mean_probs = 0.5 * (a.predict_proba(data.features) + b.predict_proba(data.features))
        assert np.allclose(scores, mean_probs)

    def test_zero_iterations_reproducible(self):
        labels = np.array([0, 1, 1, 0])
        member = StubMember(np.tile([0.5, 0.5], (4, 1)))
        data = indexed_dataset(labels)
        a = fit_stacking([member], data, iterations=0)
        b = fit_stacking([member], data, iterations=0)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)

    def test_complementary_members_beat_best_individual(self):
        # members are confident when correct, hesitant when wrong
        n = 40
        labels = np.array([i % 2 for i in range(n)])
        probs_a = np.zeros((n, 2))
        probs_b = np.zeros((n, 2))
        for i, y in enumerate(labels):
            if i < n // 2:  # first half: A correct, B wrong
                probs_a[i, y] = 0.95
                probs_a[i, 1 - y] = 0.05
                probs_b[i, y] = 0.40
                probs_b[i, 1 - y] = 0.60
            else:  # second half: B correct, A wrong
                probs_a[i, y] = 0.40
                probs_a[i, 1 - y] = 0.60
                probs_b[i, y] = 0.95
                probs_b[i, 1 - y] = 0.05
        a, b = StubMember(probs_a), StubMember(probs_b)
        data = indexed_dataset(labels)
        acc_a = float((np.argmax(probs_a, axis=1) == labels).mean())
        acc_b = float((np.argmax(probs_b, axis=1) == labels).mean())
        stack = fit_stacking([a, b], data, iterations=200)
        stacked = predict_ensemble([a, b], stack, data).accuracy
        assert stacked > max(acc_a, acc_b)

    def test_degenerate_constant_members_survive(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        member = StubMember(np.tile([1.0, 0.0, 0.0], (6, 1)))
        data = indexed_dataset(labels)
        stack = fit_stacking([member], data, iterations=100)
        profile = predict_ensemble([member], stack, data)
        assert profile.p.shape == (6,)
        assert np.all(np.isfinite(stack.weights))

    def test_validation(self):
        data = indexed_dataset(np.array([0, 1]))
        with pytest.raises(ValueError):
            fit_stacking([], data, iterations=10)
        with pytest.raises(ValueError):
            fit_stacking([StubMember(np.ones((2, 2)))], data, iterations=-1)


class TestPermutationInvariance:
    def test_member_order_with_permuted_weights(self):
        labels = np.array([0, 1, 1, 0, 1])
        rng = np.random.default_rng(3)
        a = StubMember(rng.dirichlet([1, 1], 5))
        b = StubMember(rng.dirichlet([1, 1], 5))
        data = indexed_dataset(labels)
        stack = fit_stacking([a, b], data, iterations=30)
        # permute members and swap the corresponding weight blocks
        w = stack.weights
        permuted = StackingModel(
            weights=np.concatenate([w[:, 2:], w[:, :2]], axis=1),
            bias=stack.bias,
            iterations=stack.iterations,
        )
        original = predict_ensemble([a, b], stack, data)
        swapped = predict_ensemble([b, a], permuted, data)
        assert np.array_equal(original.y, swapped.y)


class TestOnBlobs:
    def test_ensemble_at_least_median_member(self, tiny_bounds):
        wins = 0
        for seed in range(10):
            data = synth_blobs(3, 80, 6, 0.7, np.random.default_rng(seed))
            parts = standardize(split(data, (0.6, 0.2, 0.2), np.random.default_rng(seed)))
            rng = np.random.default_rng(100 + seed)
            genomes = [random_genome(tiny_bounds, rng) for _ in range(5)]
            cfg = TrainConfig(epochs=12, batch_size=16, learning_rate=0.08, seed=seed)
            models = train_models(genomes, parts, cfg)
            stack = fit_stacking(models, parts.val, iterations=300)
            stacked = predict_ensemble(models, stack, parts.test).accuracy
            member_accs = [evaluate(m, parts.test).accuracy for m in models]
            if stacked >= float(np.median(member_accs)):
                wins += 1
        assert wins >= 8

    def test_stack_round_trip(self, tmp_path):
        labels = np.array([0, 1, 0, 1])
        member = StubMember(np.array([[0.9, 0.1], [0.2, 0.8], [0.8, 0.2], [0.1, 0.9]]))
        data = indexed_dataset(labels)
        stack = fit_stacking([member], data, iterations=25)
        path = tmp_path / "stack.bin"
        stack.save(path)
        back = StackingModel.load(path)
        assert np.array_equal(back.weights, stack.weights)
        assert np.array_equal(back.bias, stack.bias)
        assert back.iterations == 25
