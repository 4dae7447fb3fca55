"""Multi-label evaluation: ROC/AUC, micro and macro averages, coverage, LRAP.

Ties are handled conservatively everywhere: AUC gives half credit to tied
positive/negative pairs (the Mann-Whitney convention) and rank-based metrics
count tied scores as ranked above, so a tie never flatters the prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalBatch:
    """Q x L ground-truth indicators and the matching real-valued scores."""

    truths: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        truths = np.asarray(self.truths, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if truths.shape != scores.shape or truths.ndim != 2:
            raise ValueError(f"EvalBatch shapes: {truths.shape} vs {scores.shape}")
        if not np.isin(truths, (0.0, 1.0)).all():
            raise ValueError("truths must be binary")
        object.__setattr__(self, "truths", truths)
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True)
class RocCurve:
    """Operating points swept from the highest threshold down.

    fpr and tpr are nondecreasing and run from (0, 0) to (1, 1); thresholds
    start at +inf and then take each distinct score once.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc_and_auc(truth, scores) -> tuple[RocCurve, float]:
    """ROC curve by threshold sweep with tie grouping, and its exact area.

    The trapezoidal area over tie-grouped points equals the Mann-Whitney
    statistic P(pos > neg) + 0.5 * P(pos == neg).
    """
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if truth.shape != scores.shape:
        raise ValueError(f"roc_and_auc shapes: {truth.shape} vs {scores.shape}")
    n_pos = float(truth.sum())
    n_neg = float(truth.size - truth.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_truth = truth[order]
    # Indices where a tie group ends (last occurrence of each distinct score).
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.r_[boundary, truth.size - 1]
    tp = np.cumsum(sorted_truth)[ends]
    fp = (ends + 1) - tp
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, sorted_scores[ends]]
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds), auc


def micro_macro_auc(batch: EvalBatch) -> tuple[float, float]:
    """Micro: AUC over flattened query-label pairs. Macro: unweighted per-label mean.

    Labels with a single class are excluded from the macro mean with a logged
    warning; if no label has both classes the evaluation fails.
    """
    _, micro = roc_and_auc(batch.truths.reshape(-1), batch.scores.reshape(-1))
    per_label = []
    skipped = 0
    for j in range(batch.truths.shape[1]):
        col = batch.truths[:, j]
        if col.min() == col.max():
            skipped += 1
            continue
        _, auc = roc_and_auc(col, batch.scores[:, j])
        per_label.append(auc)
    if skipped:
        logger.warning("macro-AUC skipped %d single-class labels", skipped)
    if not per_label:
        raise ValueError("no label has both classes present; macro-AUC undefined")
    return micro, float(np.mean(per_label))


def _ranks(scores_row: np.ndarray) -> np.ndarray:
    # rank of label j = number of labels scored >= score_j (ties count above)
    return (scores_row[None, :] >= scores_row[:, None]).sum(axis=1)


def _rows_with_positives(batch: EvalBatch) -> np.ndarray:
    has_pos = batch.truths.sum(axis=1) > 0
    n_skipped = int((~has_pos).sum())
    if n_skipped:
        logger.warning("excluded %d queries with no positive label", n_skipped)
    return has_pos


def coverage_error(batch: EvalBatch) -> float:
    """Mean over queries of the deepest rank needed to cover every true label."""
    has_pos = _rows_with_positives(batch)
    if not has_pos.any():
        raise ValueError("no query has a positive label")
    depths = []
    for truths, scores in zip(batch.truths[has_pos], batch.scores[has_pos]):
        ranks = _ranks(scores)
        depths.append(ranks[truths == 1.0].max())
    return float(np.mean(depths))


def lrap(batch: EvalBatch) -> float:
    """Label ranking average precision with pessimistic tie handling."""
    has_pos = _rows_with_positives(batch)
    if not has_pos.any():
        raise ValueError("no query has a positive label")
    per_query = []
    for truths, scores in zip(batch.truths[has_pos], batch.scores[has_pos]):
        ranks = _ranks(scores)
        true_idx = np.nonzero(truths == 1.0)[0]
        true_ranks = ranks[true_idx]
        precision = [
            np.sum(true_ranks <= rank_j) / rank_j for rank_j in true_ranks
        ]
        per_query.append(np.mean(precision))
    return float(np.mean(per_query))
