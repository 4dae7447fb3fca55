"""Training objectives: cross entropy, ranking losses, energy, and variants.

The counting ranking loss is the evaluation-time form; it is piecewise
constant, so training uses a softplus surrogate whose pair set is fixed by
the detached anchor scores and whose gradient flows only into the projected
scores. The energy couples the two heads through the graph's transfer matrix
in both directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode

VARIANT_TAGS = ("CI", "CTI", "coCTI", "coCTI_MTL")

CLAMP_EPS = 1e-12


@dataclass(frozen=True)
class LossVariant:
    """Which terms are active, and the loss hyperparameters."""

    tag: str
    energy_weight: float = 1.0
    include_concept_ce: bool = True
    temperature: float = 10.0

    def __post_init__(self):
        if self.tag not in VARIANT_TAGS:
            raise ValueError(f"unknown variant {self.tag!r}; expected one of {VARIANT_TAGS}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def cross_entropy(truth: np.ndarray, probs: DiffNode, eps: float = CLAMP_EPS) -> DiffNode:
    """Multi-label binary cross entropy, summed over labels (and batch columns)."""
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != probs.value.shape:
        raise ValueError(f"cross_entropy shape mismatch: {truth.shape} vs {probs.value.shape}")
    p = ad.clamp(probs, eps, 1.0 - eps)
    pos = ad.sum_all(ad.mul_const(ad.log(p), truth))
    neg = ad.sum_all(ad.mul_const(ad.log(ad.affine(p, -1.0, 1.0)), 1.0 - truth))
    return ad.affine(ad.add(pos, neg), -1.0)


def cross_entropy_value(truth: np.ndarray, probs: np.ndarray, eps: float = CLAMP_EPS) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    truth = np.asarray(truth, dtype=np.float64)
    return float(-(truth * np.log(p) + (1.0 - truth) * np.log(1.0 - p)).sum())


def ranking_loss_count(x_scores: np.ndarray, y_scores: np.ndarray,
                       truth_cardinality: int) -> float:
    """Normalized count of pairs ranked one way by x and the other way by y.

    Counts ordered pairs (p, q) with y[p] < y[q] while x[p] >= x[q], divided
    by card * (L - card). Degenerate cardinalities (0 or L) give 0.
    """
    x = np.asarray(x_scores, dtype=np.float64)
    y = np.asarray(y_scores, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"ranking loss expects equal 1-D shapes, got {x.shape}, {y.shape}")
    n = x.size
    if truth_cardinality <= 0 or truth_cardinality >= n:
        return 0.0
    violating = (y[:, None] < y[None, :]) & (x[:, None] >= x[None, :])
    np.fill_diagonal(violating, False)
    return float(violating.sum()) / (truth_cardinality * (n - truth_cardinality))


def _candidate_pairs(x: np.ndarray) -> np.ndarray:
    """Selection matrix with one row per ordered pair (p, q), p != q, x[p] >= x[q].

    Row i maps a score vector y to y[q] - y[p]."""
    n = x.size
    ge = x[:, None] >= x[None, :]
    np.fill_diagonal(ge, False)
    ps, qs = np.nonzero(ge)
    sel = np.zeros((ps.size, n))
    sel[np.arange(ps.size), qs] = 1.0
    sel[np.arange(ps.size), ps] = -1.0
    return sel


def ranking_loss_surrogate(x_scores: np.ndarray, y: DiffNode, truth_cardinality: int,
                           temperature: float = 10.0) -> DiffNode:
    """Differentiable relaxation of the counting loss.

    The pair set comes from the detached anchor scores; each candidate pair
    contributes softplus(t * (y[q] - y[p])) / t, so no gradient flows through
    the comparisons and the result upper-bounds (ln 2 / t) times the count.
    """
    x = np.asarray(x_scores, dtype=np.float64)
    if x.shape != y.value.shape or x.ndim != 1:
        raise ValueError(f"ranking loss expects equal 1-D shapes, got {x.shape}, {y.value.shape}")
    n = x.size
    if truth_cardinality <= 0 or truth_cardinality >= n:
        return ad.constant(np.asarray(0.0))
    sel = _candidate_pairs(x)
    if sel.shape[0] == 0:
        return ad.constant(np.asarray(0.0))
    diffs = ad.matmul(ad.constant(sel), y)
    total = ad.sum_all(ad.softplus(ad.affine(diffs, temperature)))
    norm = temperature * truth_cardinality * (n - truth_cardinality)
    return ad.affine(total, 1.0 / norm)


def energy(concept_probs: DiffNode, transition_probs: DiffNode, transfer: np.ndarray,
           concept_cardinality: int, transition_cardinality: int,
           temperature: float = 10.0) -> DiffNode:
    """Rank-conflict energy between the two heads, projected through the graph.

    Transition scores map to concept space via the incidence matrix and are
    ranked against the predicted concepts, and vice versa; each direction is a
    surrogate ranking loss anchored on the other head's detached scores.
    """
    transfer = np.asarray(transfer, dtype=np.float64)
    m, n = transfer.shape
    if concept_probs.value.shape != (m,) or transition_probs.value.shape != (n,):
        raise ValueError(
            f"energy shapes: transfer {transfer.shape}, concepts {concept_probs.value.shape}, "
            f"transitions {transition_probs.value.shape}")
    concept_view = ad.matmul(ad.constant(transfer), transition_probs)
    transition_view = ad.matmul(ad.constant(transfer.T), concept_probs)
    term_c = ranking_loss_surrogate(concept_probs.value, concept_view,
                                    concept_cardinality, temperature)
    term_t = ranking_loss_surrogate(transition_probs.value, transition_view,
                                    transition_cardinality, temperature)
    return ad.add(term_c, term_t)


def energy_count(concept_probs: np.ndarray, transition_probs: np.ndarray,
                 transfer: np.ndarray, concept_cardinality: int,
                 transition_cardinality: int) -> float:
    """Counting form of the energy, for evaluation and reporting."""
    transfer = np.asarray(transfer, dtype=np.float64)
    concept_view = transfer @ np.asarray(transition_probs, dtype=np.float64)
    transition_view = transfer.T @ np.asarray(concept_probs, dtype=np.float64)
    return (ranking_loss_count(concept_probs, concept_view, concept_cardinality)
            + ranking_loss_count(transition_probs, transition_view, transition_cardinality))


def mutual_transfer_loss(truth_concepts: np.ndarray, truth_transitions: np.ndarray,
                         concept_probs: DiffNode, transition_probs: DiffNode,
                         transfer: np.ndarray, energy_weight: float = 1.0,
                         include_concept_ce: bool = True,
                         temperature: float = 10.0) -> DiffNode:
    """Transition cross entropy plus the weighted energy (plus concept CE when enabled)."""
    loss = cross_entropy(truth_transitions, transition_probs)
    if energy_weight != 0.0:
        e = energy(concept_probs, transition_probs, transfer,
                   int(np.sum(truth_concepts)), int(np.sum(truth_transitions)),
                   temperature)
        loss = ad.add(loss, ad.affine(e, energy_weight))
    if include_concept_ce:
        loss = ad.add(loss, cross_entropy(truth_concepts, concept_probs))
    return loss


def loss_for_variant(variant: LossVariant, truth_concepts: np.ndarray,
                     truth_transitions: np.ndarray, concept_probs: DiffNode,
                     transition_probs: DiffNode, transfer: np.ndarray) -> DiffNode:
    if variant.tag == "CI":
        return cross_entropy(truth_concepts, concept_probs)
    if variant.tag == "CTI":
        return cross_entropy(truth_transitions, transition_probs)
    if variant.tag == "coCTI":
        return ad.add(cross_entropy(truth_concepts, concept_probs),
                      cross_entropy(truth_transitions, transition_probs))
    if variant.tag == "coCTI_MTL":
        return mutual_transfer_loss(truth_concepts, truth_transitions,
                                    concept_probs, transition_probs, transfer,
                                    energy_weight=variant.energy_weight,
                                    include_concept_ce=variant.include_concept_ce,
                                    temperature=variant.temperature)
    raise ValueError(f"unknown variant {variant.tag!r}")


def batch_loss(variant: LossVariant, truth_concepts: np.ndarray,
               truth_transitions: np.ndarray, concept_probs: DiffNode,
               transition_probs: DiffNode, transfer: np.ndarray) -> DiffNode:
    """Mean per-query loss over a batch of column-stacked predictions.

    ``truth_concepts`` is (M, B), ``truth_transitions`` is (N, B), matching
    the batched forward outputs. Cross entropies are computed matrix-wide;
    the energy term needs per-query pair sets, so it picks columns.
    """
    batch = truth_concepts.shape[1]
    if variant.tag == "CI":
        total = cross_entropy(truth_concepts, concept_probs)
    elif variant.tag == "CTI":
        total = cross_entropy(truth_transitions, transition_probs)
    elif variant.tag == "coCTI":
        total = ad.add(cross_entropy(truth_concepts, concept_probs),
                       cross_entropy(truth_transitions, transition_probs))
    elif variant.tag == "coCTI_MTL":
        total = cross_entropy(truth_transitions, transition_probs)
        if variant.include_concept_ce:
            total = ad.add(total, cross_entropy(truth_concepts, concept_probs))
        if variant.energy_weight != 0.0:
            for b in range(batch):
                e = energy(ad.take_col(concept_probs, b),
                           ad.take_col(transition_probs, b), transfer,
                           int(np.sum(truth_concepts[:, b])),
                           int(np.sum(truth_transitions[:, b])),
                           variant.temperature)
                total = ad.add(total, ad.affine(e, variant.energy_weight))
    else:
        raise ValueError(f"unknown variant {variant.tag!r}")
    return ad.affine(total, 1.0 / batch)
