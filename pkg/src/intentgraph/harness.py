"""Training and evaluation harness.

Everything here is deterministic given the config seed and single-worker
execution: dataset splits, vocabulary, parameter init, batch composition and
the optimizer trajectory all derive from seeded generators, so retraining
with the same config reproduces checkpoints bit for bit.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import losses as L
from .corpus import (DatasetSplit, EncodedQuery, RawQuery, Vocabulary,
                     build_vocabulary, encode, serialize_record, split_dataset)
from .graph import ConceptGraph
from .metrics import EvalBatch, RocCurve, coverage_error, lrap, micro_macro_auc, roc_and_auc
from .model import (ModelConfig, ModelParams, Prediction, build_manifest,
                    forward_batch)

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 128


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "coCTI_MTL"
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    patience: int = 10
    clip_norm: float = 5.0
    min_count: int = 1
    energy_weight: float = 1.0
    include_concept_ce: bool = True
    temperature: float = 10.0
    d_word: int = 100
    d_pos: int = 20
    d_hidden: int = 100
    d_out_word: int = 0
    d_out_pos: int = 0
    output_activation: str = "softmax"
    deterministic: bool = True
    graph_path: str | None = None
    dataset_path: str | None = None
    checkpoint_path: str | None = None
    report_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def loss_variant(self) -> L.LossVariant:
        return L.LossVariant(self.variant, energy_weight=self.energy_weight,
                             include_concept_ce=self.include_concept_ce,
                             temperature=self.temperature)

    def model_config(self, vocab: Vocabulary, graph: ConceptGraph) -> ModelConfig:
        return ModelConfig(
            v_word=vocab.v_word, v_pos=vocab.v_pos,
            n_concepts=graph.n_concepts, n_transitions=graph.n_transitions,
            d_word=self.d_word, d_pos=self.d_pos, d_hidden=self.d_hidden,
            d_out_word=self.d_out_word, d_out_pos=self.d_out_pos,
            output_activation=self.output_activation,
        )


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_metric: float


@dataclass
class RunReport:
    variant: str
    seed: int
    epoch_stats: list[EpochStats]
    test_metrics: dict[str, float]
    per_label_auc: dict[str, float | None]
    n_train: int
    n_validation: int
    n_test: int
    split_sha: str
    best_epoch: int
    # Wall clock is informational only; report files omit it so that reruns
    # with the same seed serialize identically. The ROC curve is kept for
    # rendering and likewise never lands in report.json.
    wall_clock_sec: float = 0.0
    transition_roc: tuple[RocCurve, float] | None = None


@dataclass
class TrainResult:
    params: ModelParams
    model_config: ModelConfig
    vocab: Vocabulary
    graph: ConceptGraph
    report: RunReport
    manifest: dict
    split: DatasetSplit


def _split_sha(records: list[RawQuery]) -> str:
    import hashlib

    joined = "\n".join(serialize_record(r) for r in records)
    return hashlib.sha256(joined.encode()).hexdigest()


def _make_batches(queries: list[EncodedQuery], batch_size: int,
                  rng: np.random.Generator) -> list[list[EncodedQuery]]:
    """Seeded shuffle, then stable bucketing by length to limit padding waste."""
    order = rng.permutation(len(queries))
    lengths = np.array([len(queries[i]) for i in order])
    by_length = order[np.argsort(lengths, kind="stable")]
    chunks = [by_length[i:i + batch_size] for i in range(0, len(by_length), batch_size)]
    chunk_order = rng.permutation(len(chunks))
    return [[queries[i] for i in chunks[c]] for c in chunk_order]


def _truth_matrices(batch: list[EncodedQuery]) -> tuple[np.ndarray, np.ndarray]:
    concepts = np.stack([q.concept_labels for q in batch], axis=1)
    transitions = np.stack([q.transition_labels for q in batch], axis=1)
    return concepts, transitions


def predict_matrices(params: ModelParams, config: ModelConfig,
                     queries: list[EncodedQuery],
                     batch_size: int = EVAL_BATCH_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Concept and transition probability matrices, one row per query."""
    concept_rows = []
    transition_rows = []
    for i in range(0, len(queries), batch_size):
        result = forward_batch(queries[i:i + batch_size], params, config)
        concept_rows.append(result.concept_probs.value.T.copy())
        transition_rows.append(result.transition_probs.value.T.copy())
    return np.concatenate(concept_rows), np.concatenate(transition_rows)


def predict_full(params: ModelParams, config: ModelConfig,
                 queries: list[EncodedQuery],
                 batch_size: int = EVAL_BATCH_SIZE) -> list[Prediction]:
    """Per-query predictions including token confidence scores."""
    out: list[Prediction] = []
    for i in range(0, len(queries), batch_size):
        out.extend(forward_batch(queries[i:i + batch_size], params, config).predictions())
    return out


def _metric_suite(c_truth: np.ndarray, t_truth: np.ndarray,
                  c_scores: np.ndarray, t_scores: np.ndarray,
                  transfer: np.ndarray) -> dict[str, float]:
    t_batch = EvalBatch(t_truth, t_scores)
    c_batch = EvalBatch(c_truth, c_scores)
    micro_t, macro_t = micro_macro_auc(t_batch)
    micro_c, macro_c = micro_macro_auc(c_batch)
    energies = [
        L.energy_count(c_scores[i], t_scores[i], transfer,
                       int(c_truth[i].sum()), int(t_truth[i].sum()))
        for i in range(t_truth.shape[0])
    ]
    return {
        "transition_micro_auc": micro_t,
        "transition_macro_auc": macro_t,
        "transition_coverage_error": coverage_error(t_batch),
        "transition_lrap": lrap(t_batch),
        "concept_micro_auc": micro_c,
        "concept_macro_auc": macro_c,
        "concept_coverage_error": coverage_error(c_batch),
        "concept_lrap": lrap(c_batch),
        "mean_energy": float(np.mean(energies)),
        "median_energy": float(np.median(energies)),
    }


def _per_label_auc(t_truth: np.ndarray, t_scores: np.ndarray,
                   graph: ConceptGraph) -> dict[str, float | None]:
    table: dict[str, float | None] = {}
    for n in range(graph.n_transitions):
        col = t_truth[:, n]
        if col.min() == col.max():
            table[graph.transition_name(n)] = None
            continue
        _, auc = roc_and_auc(col, t_scores[:, n])
        table[graph.transition_name(n)] = auc
    return table


def _validation_metric(variant_tag: str, params: ModelParams, config: ModelConfig,
                       queries: list[EncodedQuery]) -> float:
    c_scores, t_scores = predict_matrices(params, config, queries)
    c_truth, t_truth = _truth_matrices(queries)
    if variant_tag == "CI":
        _, auc = roc_and_auc(c_truth.reshape(-1), c_scores.T.reshape(-1))
    else:
        _, auc = roc_and_auc(t_truth.reshape(-1), t_scores.T.reshape(-1))
    return auc


@dataclass
class _FitResult:
    params: ModelParams
    model_config: ModelConfig
    vocab: Vocabulary
    epoch_stats: list[EpochStats]
    best_epoch: int
    best_val: float


def _fit(train_queries: list[EncodedQuery], val_queries: list[EncodedQuery],
         graph: ConceptGraph, vocab: Vocabulary, config: TrainConfig) -> _FitResult:
    model_config = config.model_config(vocab, graph)
    params = ModelParams.init(model_config, seed=config.seed)
    named = params.named()
    optimizer = ad.Adam(named, lr=config.lr)
    variant = config.loss_variant()
    rng = np.random.default_rng([config.seed, 1])

    best_val = -np.inf
    best_arrays = params.arrays()
    best_epoch = 0
    stats: list[EpochStats] = []
    stale = 0
    for epoch in range(1, config.epochs + 1):
        total_loss = 0.0
        total_queries = 0
        for batch_no, batch in enumerate(_make_batches(train_queries, config.batch_size, rng)):
            optimizer.zero_grad()
            try:
                result = forward_batch(batch, params, model_config)
                c_truth, t_truth = _truth_matrices(batch)
                loss = L.batch_loss(variant, c_truth, t_truth,
                                    result.concept_probs, result.transition_probs,
                                    graph.transfer)
                ad.backward(loss)
            except ad.NonFiniteError as err:
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}: {err}"
                ) from err
            ad.clip_global_norm(named.values(), config.clip_norm)
            optimizer.step()
            total_loss += float(loss.value) * len(batch)
            total_queries += len(batch)
        train_loss = total_loss / total_queries
        val_metric = _validation_metric(variant.tag, params, model_config, val_queries)
        stats.append(EpochStats(epoch, train_loss, val_metric))
        logger.info("epoch %d: train loss %.4f, validation %.4f", epoch, train_loss, val_metric)
        if val_metric > best_val:
            best_val = val_metric
            best_arrays = params.arrays()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    params.load_arrays(best_arrays)
    return _FitResult(params, model_config, vocab, stats, best_epoch, best_val)


def train(records: list[RawQuery], graph: ConceptGraph, config: TrainConfig) -> TrainResult:
    """Split, fit with early stopping on validation AUC, evaluate on the test split."""
    start = time.perf_counter()
    split = split_dataset(records, config.seed)
    vocab = build_vocabulary(split.train, config.min_count)
    enc_train = [encode(r, vocab, graph) for r in split.train]
    enc_val = [encode(r, vocab, graph) for r in split.validation]
    enc_test = [encode(r, vocab, graph) for r in split.test]

    fit = _fit(enc_train, enc_val, graph, vocab, config)
    c_scores, t_scores = predict_matrices(fit.params, fit.model_config, enc_test)
    c_truth, t_truth = _truth_matrices(enc_test)
    metrics = _metric_suite(c_truth.T, t_truth.T, c_scores, t_scores, graph.transfer)
    report = RunReport(
        variant=config.variant,
        seed=config.seed,
        epoch_stats=fit.epoch_stats,
        test_metrics=metrics,
        per_label_auc=_per_label_auc(t_truth.T, t_scores, graph),
        n_train=len(enc_train),
        n_validation=len(enc_val),
        n_test=len(enc_test),
        split_sha=_split_sha(split.test),
        best_epoch=fit.best_epoch,
        wall_clock_sec=time.perf_counter() - start,
        transition_roc=roc_and_auc(t_truth.reshape(-1), t_scores.T.reshape(-1)),
    )
    manifest = build_manifest(fit.model_config, vocab, graph)
    manifest["split_seed"] = config.seed
    manifest["min_count"] = config.min_count
    manifest["variant"] = config.variant
    return TrainResult(fit.params, fit.model_config, vocab, graph, report, manifest, split)


def save_train_result(path, result: TrainResult) -> None:
    ad.save_checkpoint(path, result.params.arrays(), result.manifest)


def evaluate(checkpoint_path, records: list[RawQuery], graph: ConceptGraph,
             split: str = "test") -> tuple[RunReport, list[Prediction]]:
    """Score a checkpoint against a dataset it was trained on.

    The checkpoint manifest pins the training-time vocabulary and graph by
    hash; the vocabulary is rebuilt from the dataset's train split and must
    match, so evaluating against a changed dataset or graph fails fast.
    """
    arrays, manifest = ad.load_checkpoint(checkpoint_path)
    config = ModelConfig(**manifest["dims"])
    data_split = split_dataset(records, manifest["split_seed"])
    vocab = build_vocabulary(data_split.train, manifest["min_count"])
    fresh = build_manifest(config, vocab, graph)
    for key in ("vocab_sha256", "graph_sha256"):
        if fresh[key] != manifest[key]:
            raise ValueError(
                f"checkpoint is stale: {key} mismatch "
                f"(checkpoint {manifest[key][:12]}, dataset {fresh[key][:12]})")
    params = ModelParams.init(config, seed=0)
    params.load_arrays(arrays)

    start = time.perf_counter()
    chosen = {"train": data_split.train, "validation": data_split.validation,
              "test": data_split.test, "all": list(records)}[split]
    queries = [encode(r, vocab, graph) for r in chosen]
    c_scores, t_scores = predict_matrices(params, config, queries)
    c_truth, t_truth = _truth_matrices(queries)
    metrics = _metric_suite(c_truth.T, t_truth.T, c_scores, t_scores, graph.transfer)
    report = RunReport(
        variant=manifest.get("variant", "unknown"),
        seed=manifest["split_seed"],
        epoch_stats=[],
        test_metrics=metrics,
        per_label_auc=_per_label_auc(t_truth.T, t_scores, graph),
        n_train=len(data_split.train),
        n_validation=len(data_split.validation),
        n_test=len(queries),
        split_sha=_split_sha(chosen),
        best_epoch=0,
        wall_clock_sec=time.perf_counter() - start,
        transition_roc=roc_and_auc(t_truth.reshape(-1), t_scores.T.reshape(-1)),
    )
    return report, predict_full(params, config, queries)


@dataclass
class CVReport:
    pooled_metrics: dict[str, float]
    per_label_auc: dict[str, float | None]
    fold_reports: list[RunReport]
    folds: int
    pooled_transition_truths: np.ndarray | None = None
    pooled_transition_scores: np.ndarray | None = None


def cross_validate(records: list[RawQuery], graph: ConceptGraph,
                   config: TrainConfig, folds: int = 5) -> CVReport:
    """K-fold protocol: disjoint test folds, predictions pooled before scoring."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if len(records) < folds:
        raise ValueError(f"need at least {folds} records for {folds} folds")
    rng = np.random.default_rng([config.seed, 2])
    perm = rng.permutation(len(records))
    fold_indices = np.array_split(perm, folds)

    pooled_c_scores, pooled_t_scores = [], []
    pooled_c_truth, pooled_t_truth = [], []
    fold_reports = []
    for fold_no, test_idx in enumerate(fold_indices):
        start = time.perf_counter()
        test_set = {int(i) for i in test_idx}
        test_records = [records[i] for i in test_idx]
        rest = [records[i] for i in perm if int(i) not in test_set]
        n_val = max(1, len(rest) // 8)
        val_records, train_records = rest[:n_val], rest[n_val:]
        vocab = build_vocabulary(train_records, config.min_count)
        enc_train = [encode(r, vocab, graph) for r in train_records]
        enc_val = [encode(r, vocab, graph) for r in val_records]
        enc_test = [encode(r, vocab, graph) for r in test_records]
        fit = _fit(enc_train, enc_val, graph, vocab, config)
        c_scores, t_scores = predict_matrices(fit.params, fit.model_config, enc_test)
        c_truth, t_truth = _truth_matrices(enc_test)
        pooled_c_scores.append(c_scores)
        pooled_t_scores.append(t_scores)
        pooled_c_truth.append(c_truth.T)
        pooled_t_truth.append(t_truth.T)
        metrics = _metric_suite(c_truth.T, t_truth.T, c_scores, t_scores, graph.transfer)
        fold_reports.append(RunReport(
            variant=config.variant, seed=config.seed, epoch_stats=fit.epoch_stats,
            test_metrics=metrics,
            per_label_auc=_per_label_auc(t_truth.T, t_scores, graph),
            n_train=len(enc_train), n_validation=len(enc_val), n_test=len(enc_test),
            split_sha=_split_sha(test_records), best_epoch=fit.best_epoch,
            wall_clock_sec=time.perf_counter() - start,
        ))
        logger.info("fold %d/%d done", fold_no + 1, folds)
    c_scores = np.concatenate(pooled_c_scores)
    t_scores = np.concatenate(pooled_t_scores)
    c_truth = np.concatenate(pooled_c_truth)
    t_truth = np.concatenate(pooled_t_truth)
    pooled = _metric_suite(c_truth, t_truth, c_scores, t_scores, graph.transfer)
    return CVReport(
        pooled_metrics=pooled,
        per_label_auc=_per_label_auc(t_truth, t_scores, graph),
        fold_reports=fold_reports,
        folds=folds,
        pooled_transition_truths=t_truth,
        pooled_transition_scores=t_scores,
    )


# ---------------------------------------------------------------------------
# logistic regression baseline


def bag_of_features(query: EncodedQuery, vocab: Vocabulary) -> np.ndarray:
    """Word-count and POS-count features concatenated into one vector."""
    feats = np.zeros(vocab.v_word + vocab.v_pos)
    for i in query.word_ids:
        feats[i] += 1.0
    for i in query.pos_ids:
        feats[vocab.v_word + i] += 1.0
    return feats


def lr_predict(weights: np.ndarray, bias: np.ndarray, features: np.ndarray) -> np.ndarray:
    """LR scoring rule: sigmoid(W f + b) per column; rows are queries in the output."""
    z = weights @ features + bias[:, None]
    return (1.0 / (1.0 + np.exp(-z))).T


def lr_baseline(records: list[RawQuery], graph: ConceptGraph,
                config: TrainConfig) -> RunReport:
    """Per-transition logistic regression on bag-of-words + bag-of-POS counts.

    Shares the split, optimizer machinery and metric suite with the neural
    variants so comparisons differ only in the model.
    """
    start = time.perf_counter()
    split = split_dataset(records, config.seed)
    vocab = build_vocabulary(split.train, config.min_count)
    enc = {name: [encode(r, vocab, graph) for r in getattr(split, name)]
           for name in ("train", "validation", "test")}
    feats = {name: np.stack([bag_of_features(q, vocab) for q in qs], axis=1)
             for name, qs in enc.items()}

    d_feat = vocab.v_word + vocab.v_pos
    rng = np.random.default_rng(config.seed)
    weights = ad.leaf(ad.xavier_init((graph.n_transitions, d_feat), rng))
    bias = ad.leaf(np.zeros(graph.n_transitions))
    named = {"weights": weights, "bias": bias}
    optimizer = ad.Adam(named, lr=config.lr)
    batch_rng = np.random.default_rng([config.seed, 3])

    def predict(feature_matrix: np.ndarray) -> np.ndarray:
        return lr_predict(weights.value, bias.value, feature_matrix)

    n_train = len(enc["train"])
    _, t_truth_val = _truth_matrices(enc["validation"])
    best_val, best_arrays, best_epoch, stale = -np.inf, None, 0, 0
    stats = []
    for epoch in range(1, config.epochs + 1):
        order = batch_rng.permutation(n_train)
        total = 0.0
        for i in range(0, n_train, config.batch_size):
            idx = order[i:i + config.batch_size]
            batch_feats = ad.constant(feats["train"][:, idx])
            t_truth = np.stack([enc["train"][j].transition_labels for j in idx], axis=1)
            optimizer.zero_grad()
            probs = ad.sigmoid(ad.add_colvec(ad.matmul(weights, batch_feats), bias))
            loss = ad.affine(L.cross_entropy(t_truth, probs), 1.0 / len(idx))
            ad.backward(loss)
            ad.clip_global_norm(named.values(), config.clip_norm)
            optimizer.step()
            total += float(loss.value) * len(idx)
        _, val_auc = roc_and_auc(t_truth_val.reshape(-1), predict(feats["validation"]).T.reshape(-1))
        stats.append(EpochStats(epoch, total / n_train, val_auc))
        if val_auc > best_val:
            best_val, best_epoch, stale = val_auc, epoch, 0
            best_arrays = {k: v.value.copy() for k, v in named.items()}
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best_arrays is not None:
        weights.value = best_arrays["weights"]
        bias.value = best_arrays["bias"]

    t_scores = predict(feats["test"])
    c_truth, t_truth = _truth_matrices(enc["test"])
    t_batch = EvalBatch(t_truth.T, t_scores)
    micro_t, macro_t = micro_macro_auc(t_batch)
    metrics = {
        "transition_micro_auc": micro_t,
        "transition_macro_auc": macro_t,
        "transition_coverage_error": coverage_error(t_batch),
        "transition_lrap": lrap(t_batch),
    }
    return RunReport(
        variant="LR", seed=config.seed, epoch_stats=stats, test_metrics=metrics,
        per_label_auc=_per_label_auc(t_truth.T, t_scores, graph),
        n_train=len(enc["train"]), n_validation=len(enc["validation"]),
        n_test=len(enc["test"]), split_sha=_split_sha(split.test),
        best_epoch=best_epoch, wall_clock_sec=time.perf_counter() - start,
        transition_roc=roc_and_auc(t_truth.reshape(-1), t_scores.T.reshape(-1)),
    )


def compare_variants(records: list[RawQuery], graph: ConceptGraph,
                     config: TrainConfig, variants: list[str]) -> list[RunReport]:
    """Train each variant under identical seeds and splits; 'LR' runs the baseline."""
    reports = []
    for tag in variants:
        if tag == "LR":
            reports.append(lr_baseline(records, graph, config))
        else:
            result = train(records, graph, replace(config, variant=tag))
            reports.append(result.report)
        logger.info("variant %s: %s", tag, reports[-1].test_metrics)
    return reports


# ---------------------------------------------------------------------------
# gradient checking entry point


def gradcheck_tiny(seed: int = 0, h: float = 1e-5,
                   include_batched: bool = False) -> dict[str, float]:
    """Finite-difference check of the full mutual-transfer loss on a tiny model.

    Returns the max relative error per parameter. With ``include_batched``
    the same check runs through the padded-batch forward path as well.
    """
    from .model import forward

    rng = np.random.default_rng(seed)
    graph = ConceptGraph(["A", "B", "C"], [("A", "B"), ("B", "C"), ("A", "C")])
    config = ModelConfig(v_word=20, v_pos=8, n_concepts=3, n_transitions=3,
                         d_word=6, d_pos=4, d_hidden=6)
    params = ModelParams.init(config, seed=seed)
    named = params.named()
    k = 5
    query = EncodedQuery(
        word_ids=tuple(int(i) for i in rng.integers(0, 20, size=k)),
        pos_ids=tuple(int(i) for i in rng.integers(0, 8, size=k)),
        concept_labels=np.array([1.0, 0.0, 1.0]),
        transition_labels=np.array([0.0, 1.0, 0.0]),
    )
    variant = L.LossVariant("coCTI_MTL")

    def loss_node():
        if include_batched:
            short = EncodedQuery(query.word_ids[:3], query.pos_ids[:3],
                                 query.concept_labels, query.transition_labels)
            result = forward_batch([query, short], params, config)
            c_truth, t_truth = _truth_matrices([query, short])
            return L.batch_loss(variant, c_truth, t_truth,
                                result.concept_probs, result.transition_probs,
                                graph.transfer)
        result = forward(query, params, config)
        return L.loss_for_variant(variant, query.concept_labels, query.transition_labels,
                                  result.concept_probs, result.transition_probs,
                                  graph.transfer)

    ad.zero_grads(named.values())
    ad.backward(loss_node())
    analytic = {name: p.grad.copy() for name, p in named.items()}
    numeric = ad.finite_difference_gradients(lambda: float(loss_node().value), named, h=h)
    return {name: ad.max_relative_error(analytic[name], numeric[name]) for name in named}
