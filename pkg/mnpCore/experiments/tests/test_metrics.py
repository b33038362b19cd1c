import numpy as np
from django.test import SimpleTestCase

from neural_processes.datasets import one_hot
from neural_processes.exceptions import ContractError
from neural_processes.metrics import accuracy, auroc, ece, nll, reliability_bins, uncertainty


def pairwise_auroc(scores_id, scores_ood):
    total = 0.0
    for a in scores_ood:
        for b in scores_id:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(scores_id) * len(scores_ood))


class AccuracyTests(SimpleTestCase):
    def test_reference_values(self):
        targets = one_hot([0, 1], 2)
        self.assertEqual(accuracy(targets, targets), 1.0)
        self.assertEqual(accuracy(np.array([[0.9, 0.1], [0.6, 0.4]]), targets), 0.5)

    def test_ties_go_to_lowest_class(self):
        self.assertEqual(accuracy(np.array([[0.5, 0.5]]), one_hot([0], 2)), 1.0)

    def test_matches_loop_and_ignores_order(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(4), size=50)
        targets = one_hot(rng.integers(0, 4, size=50), 4)
        expected = sum(int(np.argmax(p) == np.argmax(t)) for p, t in zip(probs, targets)) / 50
        self.assertAlmostEqual(accuracy(probs, targets), expected)
        order = rng.permutation(50)
        self.assertAlmostEqual(accuracy(probs[order], targets[order]), expected)

    def test_contract_errors(self):
        with self.assertRaises(ContractError):
            accuracy(np.empty((0, 2)), np.empty((0, 2)))
        with self.assertRaises(ContractError):
            accuracy(np.ones((2, 2)), np.ones((3, 2)))


class CalibrationTests(SimpleTestCase):
    def test_two_sample_reference_case(self):
        probs = np.array([[0.8, 0.2], [0.8, 0.2]])
        targets = one_hot([0, 1], 2)
        self.assertLess(abs(ece(probs, targets) - 0.3), 1e-12)

    def test_confident_correct_predictions(self):
        targets = one_hot([0, 1, 2], 3)
        self.assertEqual(ece(targets, targets), 0.0)

    def test_single_sample(self):
        self.assertAlmostEqual(ece(np.array([[0.3, 0.7]]), one_hot([0], 2)), 0.7)

    def test_bins_are_right_closed(self):
        bins = reliability_bins(np.array([[0.6, 0.4], [1.0, 0.0]]), one_hot([0, 0], 2), n_bins=5)
        self.assertEqual(len(bins), 5)
        # 0.6 sits on the edge between (0.4, 0.6] and (0.6, 0.8]
        self.assertEqual([b.count for b in bins], [0, 0, 1, 0, 1])
        self.assertAlmostEqual(bins[2].upper, 0.6)

    def test_bounds_and_invalid_bins(self):
        rng = np.random.default_rng(1)
        probs = rng.dirichlet(np.ones(3), size=100)
        targets = one_hot(rng.integers(0, 3, size=100), 3)
        value = ece(probs, targets)
        self.assertGreaterEqual(value, 0.0)
        self.assertLessEqual(value, 1.0)
        with self.assertRaises(ContractError):
            ece(probs, targets, n_bins=0)

    def test_nll(self):
        self.assertAlmostEqual(nll(np.array([[0.5, 0.5]]), one_hot([1], 2)), np.log(2.0))


class AUROCTests(SimpleTestCase):
    def test_reference_values(self):
        self.assertEqual(auroc([0.1, 0.2], [0.15, 0.3]), 0.75)
        self.assertEqual(auroc([0.0, 0.1], [0.5, 0.9]), 1.0)
        self.assertEqual(auroc([0.4, 0.4], [0.4]), 0.5)

    def test_matches_pairwise_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            scores_id = rng.integers(0, 10, size=rng.integers(1, 12)).astype(float)
            scores_ood = rng.integers(0, 10, size=rng.integers(1, 12)).astype(float)
            self.assertAlmostEqual(auroc(scores_id, scores_ood), pairwise_auroc(scores_id, scores_ood))

    def test_monotone_invariance_and_symmetry(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=30), rng.normal(size=20)
        self.assertAlmostEqual(auroc(np.exp(x), np.exp(y)), auroc(x, y))
        self.assertAlmostEqual(auroc(x, y) + auroc(y, x), 1.0)

    def test_empty_scores(self):
        with self.assertRaises(ContractError):
            auroc([], [0.1])


class UncertaintyTests(SimpleTestCase):
    def test_entropy(self):
        scores = uncertainty(np.array([[0.5, 0.5], [1.0, 0.0]]))
        self.assertAlmostEqual(scores[0], np.log(2.0))
        self.assertEqual(scores[1], 0.0)

    def test_mc_variance(self):
        draws = np.stack([np.array([[0.2, 0.8]]), np.array([[0.6, 0.4]])])
        score = uncertainty(draws.mean(axis=0), draws, kind="mc_variance")
        self.assertAlmostEqual(score[0], 0.04)
        same = np.repeat(draws[:1], 3, axis=0)
        self.assertEqual(uncertainty(same[0], same, kind="mc_variance")[0], 0.0)

    def test_identical_draws_have_exactly_zero_variance(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(7, 3))
        row = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        same = np.repeat(row[None], 5, axis=0)
        scores = uncertainty(row, same, kind="mc_variance")
        self.assertTrue(np.all(scores == 0.0))

    def test_mc_variance_matches_numpy_variance(self):
        rng = np.random.default_rng(4)
        draws = rng.dirichlet(np.ones(4), size=(6, 10))
        expected = draws.var(axis=0).mean(axis=1)
        np.testing.assert_allclose(uncertainty(draws.mean(axis=0), draws, kind="mc_variance"), expected,
                                   rtol=1e-9, atol=1e-15)

    def test_mc_variance_needs_two_draws(self):
        with self.assertRaises(ContractError):
            uncertainty(np.ones((1, 2)) / 2, np.ones((1, 1, 2)) / 2, kind="mc_variance")
        with self.assertRaises(ContractError):
            uncertainty(np.ones((1, 2)) / 2, kind="mc_variance")
        with self.assertRaises(ContractError):
            uncertainty(np.ones((1, 2)) / 2, kind="variance")
