"""Forward network: embeddings, dual GRU chains, concept and transition encoders.

Two parallel GRU chains encode the word and POS-tag sequences. The concept
encoder scores every token (scores normalized to sum to one), pools the
concatenated per-token outputs with those scores, and maps the pooled vector
to per-concept probabilities. The transition encoder maps the concatenated
final hidden states to per-transition probabilities.

Both a per-query path (``forward``) and a batched path (``forward_batch``)
exist; the batched path right-pads with a mask, freezes each query's hidden
state at its true length, zeroes masked token scores, and excludes masked
positions from score normalization, so the two paths agree to rounding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode
from .corpus import EncodedQuery, Vocabulary
from .graph import ConceptGraph

OUTPUT_ACTIVATIONS = ("softmax", "identity")


@dataclass(frozen=True)
class ModelConfig:
    v_word: int
    v_pos: int
    n_concepts: int
    n_transitions: int
    d_word: int = 100
    d_pos: int = 20
    d_hidden: int = 100
    d_out_word: int = 0  # 0 means "use d_hidden"
    d_out_pos: int = 0
    output_activation: str = "softmax"

    def __post_init__(self):
        object.__setattr__(self, "d_out_word", self.d_out_word or self.d_hidden)
        object.__setattr__(self, "d_out_pos", self.d_out_pos or self.d_hidden)
        for name in ("v_word", "v_pos", "n_concepts", "n_transitions",
                     "d_word", "d_pos", "d_hidden", "d_out_word", "d_out_pos"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")

    def dims_dict(self) -> dict:
        return {
            "v_word": self.v_word, "v_pos": self.v_pos,
            "n_concepts": self.n_concepts, "n_transitions": self.n_transitions,
            "d_word": self.d_word, "d_pos": self.d_pos, "d_hidden": self.d_hidden,
            "d_out_word": self.d_out_word, "d_out_pos": self.d_out_pos,
            "output_activation": self.output_activation,
        }


@dataclass
class GRUWeights:
    """One chain's weights: reset/update gates, candidate state, output map."""

    w_reset_x: DiffNode
    w_reset_h: DiffNode
    b_reset: DiffNode
    w_update_x: DiffNode
    w_update_h: DiffNode
    b_update: DiffNode
    w_cand_x: DiffNode
    w_cand_h: DiffNode
    b_cand: DiffNode
    w_out: DiffNode

    @classmethod
    def init(cls, d_in: int, d_hidden: int, d_out: int, rng) -> "GRUWeights":
        return cls(
            w_reset_x=ad.leaf(ad.xavier_init((d_hidden, d_in), rng)),
            w_reset_h=ad.leaf(ad.xavier_init((d_hidden, d_hidden), rng)),
            b_reset=ad.leaf(np.zeros(d_hidden)),
            w_update_x=ad.leaf(ad.xavier_init((d_hidden, d_in), rng)),
            w_update_h=ad.leaf(ad.xavier_init((d_hidden, d_hidden), rng)),
            b_update=ad.leaf(np.zeros(d_hidden)),
            w_cand_x=ad.leaf(ad.xavier_init((d_hidden, d_in), rng)),
            w_cand_h=ad.leaf(ad.xavier_init((d_hidden, d_hidden), rng)),
            b_cand=ad.leaf(np.zeros(d_hidden)),
            w_out=ad.leaf(ad.xavier_init((d_out, d_hidden), rng)),
        )

    def named(self, prefix: str) -> dict[str, DiffNode]:
        return {
            f"{prefix}.{name}": getattr(self, name)
            for name in ("w_reset_x", "w_reset_h", "b_reset",
                         "w_update_x", "w_update_h", "b_update",
                         "w_cand_x", "w_cand_h", "b_cand", "w_out")
        }


@dataclass
class ModelParams:
    """All trainable tensors, as autodiff leaves."""

    word_embedding: DiffNode  # (d_word, v_word), columns indexed by word id
    pos_embedding: DiffNode
    word_rnn: GRUWeights
    pos_rnn: GRUWeights
    score_w: DiffNode  # (1, d_out_word + d_out_pos) confidence scorer
    score_b: DiffNode  # (1,)
    concept_w: DiffNode  # (M, d_out_word + d_out_pos)
    concept_b: DiffNode  # (M,)
    transition_w: DiffNode  # (N, 2 * d_hidden)
    transition_b: DiffNode  # (N,)

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d_cat = config.d_out_word + config.d_out_pos
        return cls(
            word_embedding=ad.leaf(ad.xavier_init((config.d_word, config.v_word), rng)),
            pos_embedding=ad.leaf(ad.xavier_init((config.d_pos, config.v_pos), rng)),
            word_rnn=GRUWeights.init(config.d_word, config.d_hidden, config.d_out_word, rng),
            pos_rnn=GRUWeights.init(config.d_pos, config.d_hidden, config.d_out_pos, rng),
            score_w=ad.leaf(ad.xavier_init((1, d_cat), rng)),
            score_b=ad.leaf(np.zeros(1)),
            concept_w=ad.leaf(ad.xavier_init((config.n_concepts, d_cat), rng)),
            concept_b=ad.leaf(np.zeros(config.n_concepts)),
            transition_w=ad.leaf(ad.xavier_init((config.n_transitions, 2 * config.d_hidden), rng)),
            transition_b=ad.leaf(np.zeros(config.n_transitions)),
        )

    def named(self) -> dict[str, DiffNode]:
        out = {
            "word_embedding": self.word_embedding,
            "pos_embedding": self.pos_embedding,
        }
        out.update(self.word_rnn.named("word_rnn"))
        out.update(self.pos_rnn.named("pos_rnn"))
        out.update({
            "score_w": self.score_w, "score_b": self.score_b,
            "concept_w": self.concept_w, "concept_b": self.concept_b,
            "transition_w": self.transition_w, "transition_b": self.transition_b,
        })
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self.named().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named()
        if set(arrays) != set(named):
            missing = set(named) - set(arrays)
            extra = set(arrays) - set(named)
            raise ValueError(f"parameter names mismatch: missing {missing}, extra {extra}")
        for name, node in named.items():
            if arrays[name].shape != node.value.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arrays[name].shape} vs {node.value.shape}")
            node.value = np.asarray(arrays[name], dtype=np.float64).copy()


@dataclass
class Prediction:
    """Per-query outputs: concept/transition probabilities and token confidences."""

    concept_probs: np.ndarray
    transition_probs: np.ndarray
    token_scores: np.ndarray


def embed_lookup(word_ids: Sequence[int], pos_ids: Sequence[int],
                 params: ModelParams) -> tuple[list[DiffNode], list[DiffNode]]:
    """Column lookups of both embedding tables (equals table @ one-hot)."""
    v_word = params.word_embedding.value.shape[1]
    v_pos = params.pos_embedding.value.shape[1]
    for i in word_ids:
        if not 0 <= i < v_word:
            raise ValueError(f"word id {i} out of range [0, {v_word})")
    for i in pos_ids:
        if not 0 <= i < v_pos:
            raise ValueError(f"POS id {i} out of range [0, {v_pos})")
    words = [ad.take_col(params.word_embedding, i) for i in word_ids]
    tags = [ad.take_col(params.pos_embedding, i) for i in pos_ids]
    return words, tags


def _bias_add(t: DiffNode, b: DiffNode) -> DiffNode:
    if t.value.ndim == 2:
        return ad.add_colvec(t, b)
    return ad.add(t, b)


def gru_step(x: DiffNode, h_prev: DiffNode, w: GRUWeights,
             output_activation: str = "softmax") -> tuple[DiffNode, DiffNode]:
    """One recurrence step; works on vectors or on (dim, batch) matrices."""
    r = ad.sigmoid(_bias_add(ad.add(ad.matmul(w.w_reset_x, x),
                                    ad.matmul(w.w_reset_h, h_prev)), w.b_reset))
    z = ad.sigmoid(_bias_add(ad.add(ad.matmul(w.w_update_x, x),
                                    ad.matmul(w.w_update_h, h_prev)), w.b_update))
    cand = ad.tanh(_bias_add(ad.add(ad.matmul(w.w_cand_x, x),
                                    ad.matmul(w.w_cand_h, ad.mul(r, h_prev))), w.b_cand))
    h = ad.add(ad.mul(z, h_prev), ad.mul(ad.affine(z, -1.0, 1.0), cand))
    pre = ad.matmul(w.w_out, h)
    o = ad.softmax(pre) if output_activation == "softmax" else pre
    return h, o


def run_chain(xs: Sequence[DiffNode], w: GRUWeights, output_activation: str = "softmax",
              step_masks: np.ndarray | None = None) -> tuple[list[DiffNode], list[DiffNode], DiffNode]:
    """Left-to-right recurrence from h_0 = 0; returns all h_k, all o_k, and h_K.

    For batched input, ``step_masks[k]`` is 1 for queries still inside their
    true length at step k; finished queries keep their frozen hidden state, so
    the returned final state is each query's h at its own length.
    """
    if not xs:
        raise ValueError("run_chain needs at least one input")
    d_hidden = w.w_reset_h.value.shape[0]
    if xs[0].value.ndim == 2:
        h = ad.constant(np.zeros((d_hidden, xs[0].value.shape[1])))
    else:
        h = ad.constant(np.zeros(d_hidden))
    hs: list[DiffNode] = []
    os: list[DiffNode] = []
    for k, x in enumerate(xs):
        h_new, o = gru_step(x, h, w, output_activation)
        if step_masks is not None:
            m = step_masks[k]
            h = ad.add(ad.mul_const(h_new, m[None, :]), ad.mul_const(h, 1.0 - m[None, :]))
        else:
            h = h_new
        hs.append(h)
        os.append(o)
    return hs, os, hs[-1]


def concept_encode(o_word: Sequence[DiffNode], o_pos: Sequence[DiffNode],
                   params: ModelParams,
                   mask: np.ndarray | None = None) -> tuple[DiffNode, DiffNode]:
    """Token confidence scores (normalized to sum 1) and concept probabilities.

    Raw scores are relu(score_w . [o_w, o_p] + score_b) normalized over the
    query; if every raw score is zero the scores fall back to uniform. The
    pooled vector sum_k s_k * o_k feeds an affine-plus-sigmoid concept head.
    """
    if len(o_word) != len(o_pos):
        raise ValueError(f"output sequences differ in length: {len(o_word)} vs {len(o_pos)}")
    cat = [ad.concat([ow, op]) for ow, op in zip(o_word, o_pos)]
    raw_rows = [ad.relu(_bias_add(ad.matmul(params.score_w, o), params.score_b)) for o in cat]

    if cat[0].value.ndim == 2:  # batched: rows (1, B) stack to (K, B)
        raws = ad.concat(raw_rows, axis=0)
        masked = ad.mul_const(raws, mask) if mask is not None else raws
        mask_arr = mask if mask is not None else np.ones(masked.value.shape)
        totals = ad.sum_axis0(masked)
        dead = (totals.value == 0.0).astype(np.float64)
        safe_totals = ad.add(totals, ad.constant(dead))
        scores = ad.div_rowvec(masked, safe_totals)
        if dead.any():
            lengths = mask_arr.sum(axis=0)
            fallback = mask_arr / np.maximum(lengths, 1.0)[None, :] * dead[None, :]
            scores = ad.add(scores, ad.constant(fallback))
        pooled = None
        for k, o in enumerate(cat):
            term = ad.mul_rowvec(o, ad.take_row(scores, k))
            pooled = term if pooled is None else ad.add(pooled, term)
        probs = ad.sigmoid(ad.add_colvec(ad.matmul(params.concept_w, pooled), params.concept_b))
        return scores, probs

    raws = ad.concat(raw_rows)
    total = ad.sum_all(raws)
    if total.value == 0.0:
        scores = ad.constant(np.full(len(cat), 1.0 / len(cat)))
    else:
        scores = ad.div(raws, total)
    pooled = None
    for k, o in enumerate(cat):
        term = ad.mul(o, ad.take_row(scores, k))
        pooled = term if pooled is None else ad.add(pooled, term)
    probs = ad.sigmoid(ad.add(ad.matmul(params.concept_w, pooled), params.concept_b))
    return scores, probs


def transition_encode(h_word_final: DiffNode, h_pos_final: DiffNode,
                      params: ModelParams) -> DiffNode:
    """Transition probabilities from the concatenated final hidden states."""
    joined = ad.concat([h_word_final, h_pos_final])
    logits = _bias_add(ad.matmul(params.transition_w, joined), params.transition_b)
    return ad.sigmoid(logits)


@dataclass
class ForwardResult:
    token_scores: DiffNode
    concept_probs: DiffNode
    transition_probs: DiffNode
    h_word_final: DiffNode
    h_pos_final: DiffNode

    @property
    def prediction(self) -> Prediction:
        return Prediction(
            concept_probs=self.concept_probs.value.copy(),
            transition_probs=self.transition_probs.value.copy(),
            token_scores=self.token_scores.value.copy(),
        )


def forward(query: EncodedQuery, params: ModelParams, config: ModelConfig,
            true_len: int | None = None) -> ForwardResult:
    """Run the full network on one query.

    ``true_len`` ignores any padding appended after that many tokens, making
    the result independent of trailing pad ids.
    """
    k = len(query.word_ids) if true_len is None else true_len
    if not 1 <= k <= len(query.word_ids):
        raise ValueError(f"true_len {true_len} out of range for query of length {len(query.word_ids)}")
    words, tags = embed_lookup(query.word_ids[:k], query.pos_ids[:k], params)
    _, o_word, h_word = run_chain(words, params.word_rnn, config.output_activation)
    _, o_pos, h_pos = run_chain(tags, params.pos_rnn, config.output_activation)
    scores, concept_probs = concept_encode(o_word, o_pos, params)
    transition_probs = transition_encode(h_word, h_pos, params)
    return ForwardResult(scores, concept_probs, transition_probs, h_word, h_pos)


@dataclass
class BatchForwardResult:
    """Batched outputs plus the mask/lengths needed to slice per-query views."""

    token_scores: DiffNode  # (K_max, B)
    concept_probs: DiffNode  # (M, B)
    transition_probs: DiffNode  # (N, B)
    h_word_final: DiffNode
    h_pos_final: DiffNode
    lengths: np.ndarray
    mask: np.ndarray

    def predictions(self) -> list[Prediction]:
        return [
            Prediction(
                concept_probs=self.concept_probs.value[:, b].copy(),
                transition_probs=self.transition_probs.value[:, b].copy(),
                token_scores=self.token_scores.value[: int(self.lengths[b]), b].copy(),
            )
            for b in range(len(self.lengths))
        ]


def forward_batch(queries: Sequence[EncodedQuery], params: ModelParams,
                  config: ModelConfig) -> BatchForwardResult:
    """Right-pad a batch to its longest query and run all of it on one tape."""
    if not queries:
        raise ValueError("empty batch")
    lengths = np.array([len(q.word_ids) for q in queries], dtype=int)
    k_max = int(lengths.max())
    batch = len(queries)
    mask = (np.arange(k_max)[:, None] < lengths[None, :]).astype(np.float64)

    word_steps = []
    pos_steps = []
    for k in range(k_max):
        word_steps.append([q.word_ids[k] if k < lengths[b] else 0 for b, q in enumerate(queries)])
        pos_steps.append([q.pos_ids[k] if k < lengths[b] else 0 for b, q in enumerate(queries)])
    xs_word = [ad.take_cols(params.word_embedding, ids) for ids in word_steps]
    xs_pos = [ad.take_cols(params.pos_embedding, ids) for ids in pos_steps]

    _, o_word, h_word = run_chain(xs_word, params.word_rnn, config.output_activation, step_masks=mask)
    _, o_pos, h_pos = run_chain(xs_pos, params.pos_rnn, config.output_activation, step_masks=mask)
    scores, concept_probs = concept_encode(o_word, o_pos, params, mask=mask)
    transition_probs = transition_encode(h_word, h_pos, params)
    return BatchForwardResult(scores, concept_probs, transition_probs, h_word, h_pos,
                              lengths=lengths, mask=mask)


def build_manifest(config: ModelConfig, vocab: Vocabulary, graph: ConceptGraph) -> dict:
    """Identity of the artifacts a checkpoint was trained against."""
    return {
        "dims": config.dims_dict(),
        "vocab_sha256": hashlib.sha256(vocab.canonical_text().encode()).hexdigest(),
        "graph_sha256": hashlib.sha256(graph.canonical_text().encode()).hexdigest(),
    }
