"""Evaluation metrics against all-pairs and per-row definitional oracles."""

import logging

import numpy as np
import pytest

from intentgraph.metrics import (EvalBatch, coverage_error, lrap, micro_macro_auc,
                                 roc_and_auc)


def auc_oracle(truth, scores):
    """All-pairs Mann-Whitney with half credit for ties."""
    pos = [s for t, s in zip(truth, scores) if t == 1]
    neg = [s for t, s in zip(truth, scores) if t == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def coverage_oracle(truths, scores):
    depths = []
    for t_row, s_row in zip(truths, scores):
        if t_row.sum() == 0:
            continue
        worst = 0
        for j in np.nonzero(t_row)[0]:
            rank = int(np.sum(s_row >= s_row[j]))
            worst = max(worst, rank)
        depths.append(worst)
    return float(np.mean(depths))


def lrap_oracle(truths, scores):
    per_query = []
    for t_row, s_row in zip(truths, scores):
        true_idx = np.nonzero(t_row)[0]
        if true_idx.size == 0:
            continue
        acc = 0.0
        for j in true_idx:
            rank = int(np.sum(s_row >= s_row[j]))
            above_or_tied_true = sum(1 for k in true_idx if np.sum(s_row >= s_row[k]) <= rank)
            acc += above_or_tied_true / rank
        per_query.append(acc / true_idx.size)
    return float(np.mean(per_query))


def random_batch(rng, q=None, l=None, tie_prob=0.3):
    q = q or int(rng.integers(2, 12))
    l = l or int(rng.integers(2, 9))
    truths = rng.integers(0, 2, size=(q, l)).astype(float)
    truths[truths.sum(axis=1) == 0, 0] = 1.0  # ensure a positive per row
    scores = rng.uniform(0, 1, size=(q, l))
    if rng.random() < tie_prob:
        scores[rng.integers(q), rng.integers(l)] = scores[rng.integers(q), rng.integers(l)]
    return EvalBatch(truths, scores)


class TestRocAndAuc:
    def test_perfect_separation(self):
        _, auc = roc_and_auc([1, 0], [0.9, 0.1])
        assert auc == 1.0

    def test_full_tie_is_half(self):
        _, auc = roc_and_auc([1, 0], [0.5, 0.5])
        assert auc == 0.5

    def test_matches_all_pairs_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            truth = rng.integers(0, 2, size=n)
            if truth.min() == truth.max():
                truth[0] = 1 - truth[0]
            scores = np.round(rng.uniform(0, 1, size=n), 2)  # plenty of ties
            _, auc = roc_and_auc(truth, scores)
            assert abs(auc - auc_oracle(truth, scores)) < 1e-12

    def test_curve_shape_and_endpoints(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(0, 2, size=30)
        truth[0], truth[1] = 0, 1
        curve, _ = roc_and_auc(truth, rng.uniform(size=30))
        assert curve.fpr[0] == 0.0 and curve.tpr[0] == 0.0
        assert curve.fpr[-1] == 1.0 and curve.tpr[-1] == 1.0
        assert np.all(np.diff(curve.fpr) >= 0)
        assert np.all(np.diff(curve.tpr) >= 0)
        assert curve.thresholds[0] == np.inf

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="positive and one negative"):
            roc_and_auc([1, 1], [0.2, 0.4])

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        truth = rng.integers(0, 2, size=25)
        truth[:2] = [0, 1]
        scores = rng.uniform(size=25)
        _, base = roc_and_auc(truth, scores)
        _, transformed = roc_and_auc(truth, np.exp(5 * scores) - 3)
        assert abs(base - transformed) < 1e-12

    def test_flipping_scores_flips_auc_on_tie_free_data(self):
        rng = np.random.default_rng(3)
        truth = rng.integers(0, 2, size=20)
        truth[:2] = [0, 1]
        scores = rng.permutation(20).astype(float)  # distinct scores
        _, a = roc_and_auc(truth, scores)
        _, b = roc_and_auc(truth, -scores)
        assert abs((1.0 - a) - b) < 1e-12


class TestMicroMacro:
    def test_perfect_predictions(self):
        truths = np.array([[1.0, 0.0], [0.0, 1.0]])
        micro, macro = micro_macro_auc(EvalBatch(truths, truths.copy()))
        assert micro == 1.0 and macro == 1.0

    def test_constant_scores_are_half_micro(self):
        truths = np.array([[1.0, 0.0], [0.0, 1.0]])
        micro, _ = micro_macro_auc(EvalBatch(truths, np.full((2, 2), 0.7)))
        assert micro == 0.5

    def test_micro_is_flattened_macro_is_mean_per_label(self):
        rng = np.random.default_rng(4)
        batch = random_batch(rng, q=20, l=5)
        micro, macro = micro_macro_auc(batch)
        assert abs(micro - auc_oracle(batch.truths.reshape(-1),
                                      batch.scores.reshape(-1))) < 1e-12
        per_label = [auc_oracle(batch.truths[:, j], batch.scores[:, j])
                     for j in range(5)
                     if 0 < batch.truths[:, j].sum() < 20]
        assert abs(macro - np.mean(per_label)) < 1e-12

    def test_single_class_label_dropped_with_warning(self, caplog):
        truths = np.array([[1.0, 1.0], [0.0, 1.0]])  # label 1 all-positive
        scores = np.array([[0.8, 0.5], [0.2, 0.6]])
        with caplog.at_level(logging.WARNING, logger="intentgraph.metrics"):
            _, macro = micro_macro_auc(EvalBatch(truths, scores))
        assert any("single-class" in r.message for r in caplog.records)
        assert macro == auc_oracle(truths[:, 0], scores[:, 0])

    def test_no_two_class_label_errors(self):
        truths = np.array([[1.0, 0.0], [1.0, 0.0]])
        scores = np.array([[0.6, 0.4], [0.7, 0.3]])
        with pytest.raises(ValueError, match="macro"):
            micro_macro_auc(EvalBatch(truths, scores))

    def test_joint_label_permutation_invariance(self):
        rng = np.random.default_rng(5)
        batch = random_batch(rng, q=15, l=6)
        perm = rng.permutation(6)
        permuted = EvalBatch(batch.truths[:, perm], batch.scores[:, perm])
        assert micro_macro_auc(batch) == micro_macro_auc(permuted)


class TestCoverageError:
    def test_top_ranked_truth(self):
        batch = EvalBatch(np.array([[1.0, 0.0, 0.0]]), np.array([[0.9, 0.5, 0.1]]))
        assert coverage_error(batch) == 1.0

    def test_bottom_ranked_truth(self):
        batch = EvalBatch(np.array([[0.0, 0.0, 1.0]]), np.array([[0.9, 0.5, 0.1]]))
        assert coverage_error(batch) == 3.0

    def test_matches_per_row_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            batch = random_batch(rng)
            assert coverage_error(batch) == coverage_oracle(batch.truths, batch.scores)

    def test_rows_without_positives_excluded_with_warning(self, caplog):
        truths = np.array([[1.0, 0.0], [0.0, 0.0]])
        scores = np.array([[0.9, 0.1], [0.4, 0.6]])
        with caplog.at_level(logging.WARNING, logger="intentgraph.metrics"):
            value = coverage_error(EvalBatch(truths, scores))
        assert value == 1.0
        assert any("no positive" in r.message for r in caplog.records)

    def test_range(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            batch = random_batch(rng)
            value = coverage_error(batch)
            assert 1.0 <= value <= batch.truths.shape[1]


class TestLrap:
    def test_perfect_ranking(self):
        batch = EvalBatch(np.array([[1.0, 1.0, 0.0]]), np.array([[0.9, 0.8, 0.1]]))
        assert lrap(batch) == 1.0

    def test_single_truth_ranked_second_of_two(self):
        batch = EvalBatch(np.array([[1.0, 0.0]]), np.array([[0.1, 0.9]]))
        assert lrap(batch) == 0.5

    def test_matches_per_row_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            batch = random_batch(rng)
            assert abs(lrap(batch) - lrap_oracle(batch.truths, batch.scores)) < 1e-12

    def test_range_and_permutation_invariance(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            batch = random_batch(rng, l=5)
            value = lrap(batch)
            assert 0.0 < value <= 1.0
            perm = rng.permutation(5)
            permuted = EvalBatch(batch.truths[:, perm], batch.scores[:, perm])
            assert lrap(permuted) == value


class TestEvalBatch:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            EvalBatch(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_non_binary_truths(self):
        with pytest.raises(ValueError, match="binary"):
            EvalBatch(np.full((2, 2), 0.5), np.zeros((2, 2)))
