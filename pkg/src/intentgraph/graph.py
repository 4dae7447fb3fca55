"""Domain concept graph: nodes, directed transitions, and the transfer matrix.

The graph is immutable once built and safe to share across workers. Concept
and transition ids are dense integers assigned in declaration order, so every
label vector in the rest of the pipeline indexes by them deterministically.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Concept:
    id: int
    name: str


@dataclass(frozen=True)
class Transition:
    """Directed edge between two concepts, identified by dense id."""

    id: int
    source: int
    target: int


@dataclass(frozen=True)
class ActiveConceptGraph:
    """The subgraph activated by one query: mentioned concepts and transitions."""

    concept_ids: frozenset[int]
    transition_ids: frozenset[int]


class ConceptGraph:
    """Full domain graph with M concepts, N transitions, and the M x N transfer matrix."""

    def __init__(self, concept_names: Sequence[str], edges: Sequence[tuple[str, str]]):
        if not concept_names:
            raise ValueError("concept list is empty")
        names = list(concept_names)
        if len(set(names)) != len(names):
            raise ValueError("duplicate concept names")
        if any(not n for n in names):
            raise ValueError("empty concept name")
        self.concepts = [Concept(i, name) for i, name in enumerate(names)]
        self._id_by_name = {c.name: c.id for c in self.concepts}

        self.transitions: list[Transition] = []
        self._id_by_pair: dict[tuple[int, int], int] = {}
        for src_name, tgt_name in edges:
            if src_name not in self._id_by_name:
                raise ValueError(f"edge references unknown concept {src_name!r}")
            if tgt_name not in self._id_by_name:
                raise ValueError(f"edge references unknown concept {tgt_name!r}")
            pair = (self._id_by_name[src_name], self._id_by_name[tgt_name])
            if pair in self._id_by_pair:
                raise ValueError(f"duplicate edge {src_name!r} -> {tgt_name!r}")
            if pair[0] == pair[1]:
                logger.warning("self-loop declared on concept %r", src_name)
            tid = len(self.transitions)
            self.transitions.append(Transition(tid, *pair))
            self._id_by_pair[pair] = tid

        self.transfer = build_transfer_matrix(self)

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    @property
    def n_transitions(self) -> int:
        return len(self.transitions)

    def concept_id(self, name: str) -> int:
        try:
            return self._id_by_name[name]
        except KeyError:
            raise ValueError(f"unknown concept {name!r}") from None

    def transition_id(self, source_name: str, target_name: str) -> int:
        pair = (self.concept_id(source_name), self.concept_id(target_name))
        try:
            return self._id_by_pair[pair]
        except KeyError:
            raise ValueError(
                f"no transition {source_name!r} -> {target_name!r} in graph"
            ) from None

    def transition_name(self, transition_id: int) -> str:
        t = self.transitions[transition_id]
        return f"{self.concepts[t.source].name} -> {self.concepts[t.target].name}"

    def canonical_text(self) -> str:
        """Stable serialization used for hashing in checkpoint manifests."""
        lines = ["[concepts]"]
        lines.extend(c.name for c in self.concepts)
        lines.append("[transitions]")
        lines.extend(self.transition_name(t.id) for t in self.transitions)
        return "\n".join(lines) + "\n"


def parse_graph_file(text: str) -> ConceptGraph:
    """Parse a graph definition document.

    Format: a ``[concepts]`` section with one name per line followed by a
    ``[transitions]`` section with ``Source -> Target`` lines. ``#`` starts a
    comment; blank lines are ignored.
    """
    concepts: list[str] = []
    edges: list[tuple[str, str]] = []
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "[concepts]":
            section = "concepts"
            continue
        if line.lower() == "[transitions]":
            section = "transitions"
            continue
        if section == "concepts":
            concepts.append(line)
        elif section == "transitions":
            if "->" not in line:
                raise ValueError(f"line {lineno}: expected 'Source -> Target', got {line!r}")
            src, _, tgt = line.partition("->")
            edges.append((src.strip(), tgt.strip()))
        else:
            raise ValueError(f"line {lineno}: content before any section header")
    return ConceptGraph(concepts, edges)


def build_transfer_matrix(graph: ConceptGraph) -> np.ndarray:
    """Incidence matrix A with A[m, n] = 1 iff concept m is an endpoint of transition n."""
    a = np.zeros((graph.n_concepts, graph.n_transitions), dtype=np.float64)
    for t in graph.transitions:
        a[t.source, t.id] = 1.0
        a[t.target, t.id] = 1.0
    return a


def active_subgraph(
    graph: ConceptGraph,
    concept_ids: Iterable[int],
    transition_ids: Iterable[int],
) -> ActiveConceptGraph:
    cset = frozenset(int(c) for c in concept_ids)
    tset = frozenset(int(t) for t in transition_ids)
    for c in cset:
        if not 0 <= c < graph.n_concepts:
            raise ValueError(f"concept id {c} out of range [0, {graph.n_concepts})")
    for t in tset:
        if not 0 <= t < graph.n_transitions:
            raise ValueError(f"transition id {t} out of range [0, {graph.n_transitions})")
    return ActiveConceptGraph(cset, tset)


def is_connected(active: ActiveConceptGraph, graph: ConceptGraph) -> bool:
    """True iff the undirected view of the active graph has exactly one component.

    Nodes are the active concepts plus all endpoints of active transitions
    (an endpoint counts even when its concept label is absent). The empty
    graph is connected by convention.
    """
    nodes = set(active.concept_ids)
    adjacency: dict[int, set[int]] = {}
    for tid in active.transition_ids:
        t = graph.transitions[tid]
        nodes.update((t.source, t.target))
        adjacency.setdefault(t.source, set()).add(t.target)
        adjacency.setdefault(t.target, set()).add(t.source)
    if not nodes:
        return True
    start = next(iter(nodes))
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for nbr in adjacency.get(node, ()):
            if nbr not in seen:
                seen.add(nbr)
                frontier.append(nbr)
    return seen == nodes


@dataclass
class StatsReport:
    """Mention frequencies over an encoded dataset, plus the most common active graphs."""

    concept_counts: dict[str, int]
    transition_counts: dict[str, int]
    shape_counts: list[tuple[str, int]]
    n_queries: int
    n_connected: int

    def rows(self) -> list[tuple[str, str, int]]:
        out = [("concept", name, count) for name, count in self.concept_counts.items()]
        out.extend(("transition", name, count) for name, count in self.transition_counts.items())
        out.extend(("shape", name, count) for name, count in self.shape_counts)
        return out


def _shape_name(graph: ConceptGraph, concept_ids: Sequence[int], transition_ids: Sequence[int]) -> str:
    cpart = ",".join(graph.concepts[c].name for c in concept_ids)
    tpart = ",".join(graph.transition_name(t) for t in transition_ids)
    return f"{cpart} | {tpart}"


def graph_stats(dataset: Iterable, graph: ConceptGraph, top_k: int = 10) -> StatsReport:
    """Per-concept/transition mention counts and top-k active-graph shapes.

    ``dataset`` is any iterable of encoded queries exposing ``concept_labels``
    and ``transition_labels`` multi-hot vectors indexed by this graph's ids.
    """
    concept_counts = np.zeros(graph.n_concepts, dtype=int)
    transition_counts = np.zeros(graph.n_transitions, dtype=int)
    shapes: Counter[tuple[tuple[int, ...], tuple[int, ...]]] = Counter()
    n_queries = 0
    n_connected = 0
    for query in dataset:
        c = np.asarray(query.concept_labels)
        t = np.asarray(query.transition_labels)
        concept_counts += c.astype(int)
        transition_counts += t.astype(int)
        c_ids = tuple(int(i) for i in np.flatnonzero(c))
        t_ids = tuple(int(i) for i in np.flatnonzero(t))
        shapes[(c_ids, t_ids)] += 1
        n_queries += 1
        if is_connected(ActiveConceptGraph(frozenset(c_ids), frozenset(t_ids)), graph):
            n_connected += 1

    def sort_key(items):
        return sorted(items, key=lambda kv: (-kv[1], kv[0]))

    concept_rows = sort_key(
        (graph.concepts[m].name, int(concept_counts[m])) for m in range(graph.n_concepts)
    )
    transition_rows = sort_key(
        (graph.transition_name(n), int(transition_counts[n])) for n in range(graph.n_transitions)
    )
    shape_rows = [
        (_shape_name(graph, key[0], key[1]), count)
        for key, count in sorted(shapes.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    ]
    return StatsReport(
        concept_counts=dict(concept_rows),
        transition_counts=dict(transition_rows),
        shape_counts=shape_rows,
        n_queries=n_queries,
        n_connected=n_connected,
    )
