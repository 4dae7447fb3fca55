"""Labeled query records: parsing, vocabularies, encoding, splits, synthesis.

Dataset files are UTF-8 JSON Lines with keys ``text``, ``pos``, ``concept``
and ``concept_transition``. ``text``/``pos`` hold space-separated tokens,
``concept`` is ``|``-separated and ``concept_transition`` is a ``|``-separated
list of ``a -> b -> c`` chains; a chain expands to its consecutive pairs.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import ConceptGraph

UNK_TOKEN = "<unk>"

RECORD_KEYS = ("text", "pos", "concept", "concept_transition")


@dataclass(frozen=True)
class RawQuery:
    """One labeled query before any vocabulary or graph binding."""

    words: tuple[str, ...]
    pos: tuple[str, ...]
    concepts: tuple[str, ...]
    transitions: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if len(self.words) != len(self.pos):
            raise ValueError(
                f"token/POS length mismatch: {len(self.words)} words vs {len(self.pos)} tags"
            )
        if not self.words:
            raise ValueError("query has no tokens")


@dataclass(frozen=True)
class Vocabulary:
    """Dense token indices; id 0 in each map is reserved for unknown tokens."""

    word_index: dict[str, int]
    pos_index: dict[str, int]

    @property
    def v_word(self) -> int:
        return len(self.word_index)

    @property
    def v_pos(self) -> int:
        return len(self.pos_index)

    def word_id(self, token: str) -> int:
        return self.word_index.get(token, 0)

    def pos_id(self, tag: str) -> int:
        return self.pos_index.get(tag, 0)

    def canonical_text(self) -> str:
        """Stable serialization used for hashing in checkpoint manifests."""
        words = ";".join(f"{t}={i}" for t, i in sorted(self.word_index.items()))
        tags = ";".join(f"{t}={i}" for t, i in sorted(self.pos_index.items()))
        return words + "\n" + tags


@dataclass(frozen=True)
class EncodedQuery:
    word_ids: tuple[int, ...]
    pos_ids: tuple[int, ...]
    concept_labels: np.ndarray
    transition_labels: np.ndarray

    def __len__(self) -> int:
        return len(self.word_ids)


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int


def _expand_chain(chain: str) -> list[tuple[str, str]]:
    names = [part.strip() for part in chain.split("->")]
    if len(names) < 2 or any(not n for n in names):
        raise ValueError(f"malformed transition chain {chain!r}")
    return [(names[i], names[i + 1]) for i in range(len(names) - 1)]


def parse_record(line: str) -> RawQuery:
    """Parse one JSON record into a RawQuery, expanding transition chains."""
    obj = json.loads(line)
    for key in RECORD_KEYS:
        if key not in obj:
            raise ValueError(f"record missing key {key!r}")
    words = tuple(obj["text"].split())
    pos = tuple(obj["pos"].split())
    concepts = tuple(c.strip() for c in obj["concept"].split("|") if c.strip())
    transitions: list[tuple[str, str]] = []
    for chain in obj["concept_transition"].split("|"):
        if chain.strip():
            transitions.extend(_expand_chain(chain))
    return RawQuery(words=words, pos=pos, concepts=concepts, transitions=tuple(transitions))


def _merge_chains(pairs: Sequence[tuple[str, str]]) -> list[list[str]]:
    # Greedy: extend the current chain while each pair continues from the last target.
    chains: list[list[str]] = []
    for src, tgt in pairs:
        if chains and chains[-1][-1] == src:
            chains[-1].append(tgt)
        else:
            chains.append([src, tgt])
    return chains


def serialize_record(record: RawQuery) -> str:
    """Inverse of parse_record: one JSON line in the dataset format."""
    chains = _merge_chains(record.transitions)
    obj = {
        "text": " ".join(record.words),
        "pos": " ".join(record.pos),
        "concept": "|".join(record.concepts),
        "concept_transition": "|".join(" -> ".join(chain) for chain in chains),
    }
    return json.dumps(obj, ensure_ascii=False)


def read_jsonl(path) -> list[RawQuery]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(parse_record(line))
    return records


def write_jsonl(path, records: Iterable[RawQuery]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(serialize_record(record) + "\n")


def build_vocabulary(records: Sequence[RawQuery], min_count: int = 1) -> Vocabulary:
    """Index tokens occurring at least ``min_count`` times, most frequent first.

    Ties break lexicographically so the mapping is deterministic. Tokens below
    the threshold share the unknown id 0.
    """
    if not records:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    word_counts: Counter[str] = Counter()
    pos_counts: Counter[str] = Counter()
    for record in records:
        word_counts.update(record.words)
        pos_counts.update(record.pos)

    def index(counts: Counter[str]) -> dict[str, int]:
        kept = sorted(
            (t for t, c in counts.items() if c >= min_count),
            key=lambda t: (-counts[t], t),
        )
        mapping = {UNK_TOKEN: 0}
        for i, token in enumerate(kept, start=1):
            mapping[token] = i
        return mapping

    return Vocabulary(word_index=index(word_counts), pos_index=index(pos_counts))


def encode(record: RawQuery, vocab: Vocabulary, graph: ConceptGraph) -> EncodedQuery:
    """Index-encode one record against a vocabulary and graph.

    Unknown tokens map to id 0; unknown concept or transition names are an
    error because labels must be resolvable on the graph.
    """
    concept_labels = np.zeros(graph.n_concepts, dtype=np.float64)
    for name in record.concepts:
        concept_labels[graph.concept_id(name)] = 1.0
    transition_labels = np.zeros(graph.n_transitions, dtype=np.float64)
    for src, tgt in record.transitions:
        transition_labels[graph.transition_id(src, tgt)] = 1.0
    return EncodedQuery(
        word_ids=tuple(vocab.word_id(w) for w in record.words),
        pos_ids=tuple(vocab.pos_id(p) for p in record.pos),
        concept_labels=concept_labels,
        transition_labels=transition_labels,
    )


def split_dataset(records: Sequence, seed: int) -> DatasetSplit:
    """Shuffle with a seeded generator and partition 70/10/20."""
    n = len(records)
    if n < 10:
        raise ValueError(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    # round-to-nearest keeps every part within one record of 70/10/20
    n_train = int(np.floor(0.7 * n + 0.5))
    n_val = int(np.floor(0.1 * n + 0.5))
    shuffled = [records[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the synthetic corpus generator.

    ``transition_count_weights[i]`` is the relative weight of sampling i+1
    transitions for a query; ``chain_bias`` favors extending the previous
    edge's target (chain-shaped subgraphs) over other adjacent edges.
    """

    n_queries: int
    vocab_size: int
    seed: int
    templates_per_transition: int = 2
    noise_rate: float = 0.3
    transition_count_weights: tuple[float, ...] = (0.25, 0.5, 0.25)
    chain_bias: float = 4.0
    connected_sampling: bool = True
    triggers_per_mention: tuple[int, int] = (1, 2)


TRIGGER_TAGS = ("nc", "vb", "aj")
NOISE_TAGS = ("uo", "xp")


@dataclass
class GeneratorTallies:
    """Ground-truth bookkeeping emitted alongside a synthetic corpus."""

    concept_counts: Counter = field(default_factory=Counter)
    transition_counts: Counter = field(default_factory=Counter)
    shape_counts: Counter = field(default_factory=Counter)

    def rows(self) -> list[tuple[str, str, int]]:
        out = [("concept", n, c) for n, c in sorted(self.concept_counts.items(), key=lambda kv: (-kv[1], kv[0]))]
        out.extend(("transition", n, c) for n, c in sorted(self.transition_counts.items(), key=lambda kv: (-kv[1], kv[0])))
        out.extend(("shape", n, c) for n, c in sorted(self.shape_counts.items(), key=lambda kv: (-kv[1], kv[0])))
        return out


def _word_pools(graph: ConceptGraph, vocab_size: int) -> tuple[dict[int, list[str]], list[str]]:
    m = graph.n_concepts
    per_concept = (vocab_size // 2) // m
    pools = {}
    for c in graph.concepts:
        base = c.name.lower().replace(" ", "")
        pools[c.id] = [f"{base}_{j}" for j in range(per_concept)]
    n_noise = vocab_size - per_concept * m
    noise = [f"filler_{j}" for j in range(n_noise)]
    return pools, noise


def _sample_edges(graph: ConceptGraph, n_edges: int, rng: np.random.Generator, cfg: SyntheticConfig) -> list[int]:
    if not cfg.connected_sampling:
        chosen = rng.choice(graph.n_transitions, size=min(n_edges, graph.n_transitions), replace=False)
        return [int(t) for t in chosen]
    first = int(rng.integers(graph.n_transitions))
    chosen = [first]
    nodes = {graph.transitions[first].source, graph.transitions[first].target}
    tip = graph.transitions[first].target
    while len(chosen) < n_edges:
        candidates = []
        weights = []
        for t in graph.transitions:
            if t.id in chosen:
                continue
            if t.source in nodes or t.target in nodes:
                candidates.append(t.id)
                weights.append(cfg.chain_bias if t.source == tip else 1.0)
        if not candidates:
            break
        w = np.asarray(weights) / np.sum(weights)
        pick = int(rng.choice(candidates, p=w))
        chosen.append(pick)
        t = graph.transitions[pick]
        nodes.update((t.source, t.target))
        tip = t.target
    return chosen


def generate_synthetic(
    graph: ConceptGraph, config: SyntheticConfig
) -> tuple[list[RawQuery], GeneratorTallies]:
    """Generate labeled queries whose labels are planted active subgraphs.

    Each query samples 1-3 transitions (connected, biased toward chains),
    then emits trigger words from each mentioned concept's disjoint word pool
    in transition order, interleaved with noise tokens. POS tags follow the
    pools: a concept's triggers share one tag from a small synthetic tag set,
    noise tokens draw from separate tags. Labels are exactly the sampled
    subgraph, so the returned tallies are the corpus ground truth.
    """
    if graph.n_concepts == 0:
        raise ValueError("graph has no concepts")
    if config.vocab_size < 10 * graph.n_concepts:
        raise ValueError(
            f"vocab_size {config.vocab_size} too small: need >= {10 * graph.n_concepts}"
        )
    if config.n_queries < 1:
        raise ValueError("n_queries must be >= 1")
    if not 0.0 <= config.noise_rate <= 1.0:
        raise ValueError("noise_rate must lie in [0, 1]")
    if config.templates_per_transition < 1:
        raise ValueError("templates_per_transition must be >= 1")
    if abs(sum(config.transition_count_weights) - 0.0) < 1e-12:
        raise ValueError("transition_count_weights sum to zero")

    rng = np.random.default_rng(config.seed)
    pools, noise_pool = _word_pools(graph, config.vocab_size)
    count_weights = np.asarray(config.transition_count_weights, dtype=float)
    count_weights = count_weights / count_weights.sum()
    lo_trig, hi_trig = config.triggers_per_mention

    records: list[RawQuery] = []
    tallies = GeneratorTallies()
    for _ in range(config.n_queries):
        n_edges = 1 + int(rng.choice(len(count_weights), p=count_weights))
        edge_ids = _sample_edges(graph, n_edges, rng, config)
        # Concepts in first-appearance order along the sampled transitions.
        concept_order: list[int] = []
        for tid in edge_ids:
            t = graph.transitions[tid]
            for c in (t.source, t.target):
                if c not in concept_order:
                    concept_order.append(c)

        template = int(rng.integers(config.templates_per_transition))
        words: list[str] = []
        tags: list[str] = []
        for slot, c in enumerate(concept_order):
            n_triggers = int(rng.integers(lo_trig, hi_trig + 1))
            # Templates vary phrasing: odd templates pad an extra trigger on
            # the first mention, mimicking longer lead-ins.
            if template % 2 == 1 and slot == 0:
                n_triggers = min(hi_trig, n_triggers + 1)
            picks = rng.choice(len(pools[c]), size=n_triggers, replace=False)
            for j in picks:
                words.append(pools[c][int(j)])
                tags.append(TRIGGER_TAGS[c % len(TRIGGER_TAGS)])
        n_noise = int(np.floor(config.noise_rate * len(words) + rng.uniform()))
        for _ in range(n_noise):
            at = int(rng.integers(len(words) + 1))
            words.insert(at, noise_pool[int(rng.integers(len(noise_pool)))])
            tags.insert(at, NOISE_TAGS[int(rng.integers(len(NOISE_TAGS)))])

        concept_names = tuple(graph.concepts[c].name for c in sorted(concept_order))
        pair_names = tuple(
            (
                graph.concepts[graph.transitions[tid].source].name,
                graph.concepts[graph.transitions[tid].target].name,
            )
            for tid in sorted(edge_ids)
        )
        records.append(
            RawQuery(words=tuple(words), pos=tuple(tags), concepts=concept_names, transitions=pair_names)
        )
        for name in concept_names:
            tallies.concept_counts[name] += 1
        for tid in edge_ids:
            tallies.transition_counts[graph.transition_name(tid)] += 1
        shape = ",".join(graph.concepts[c].name for c in sorted(concept_order))
        shape += " | " + ",".join(graph.transition_name(t) for t in sorted(edge_ids))
        tallies.shape_counts[shape] += 1
    return records, tallies


def write_tallies_csv(path, tallies: GeneratorTallies) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "name", "count"])
        writer.writerows(tallies.rows())
