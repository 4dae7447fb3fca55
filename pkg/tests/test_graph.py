"""Concept graph construction, transfer matrix, connectivity, and stats."""

import logging

import numpy as np
import pytest

from intentgraph.benchmark import medical_graph
from intentgraph.corpus import SyntheticConfig, build_vocabulary, encode, generate_synthetic
from intentgraph.graph import (ActiveConceptGraph, ConceptGraph, active_subgraph,
                               build_transfer_matrix, graph_stats, is_connected,
                               parse_graph_file)

from conftest import random_graph


class TestParseGraphFile:
    def test_smallest_well_formed_graph(self):
        g = parse_graph_file("[concepts]\nSymptom\nCause\n[transitions]\nSymptom -> Cause\n")
        assert g.n_concepts == 2
        assert g.n_transitions == 1
        assert (g.transitions[0].source, g.transitions[0].target) == (0, 1)

    def test_medical_graph_counts(self):
        g = medical_graph()
        assert g.n_concepts == 17
        assert g.n_transitions == 23

    def test_unknown_concept_in_edge(self):
        text = "[concepts]\nA\n[transitions]\nA -> B\n"
        with pytest.raises(ValueError, match="unknown concept"):
            parse_graph_file(text)

    def test_duplicate_edge(self):
        text = "[concepts]\nA\nB\n[transitions]\nA -> B\nA -> B\n"
        with pytest.raises(ValueError, match="duplicate edge"):
            parse_graph_file(text)

    def test_empty_concept_list(self):
        with pytest.raises(ValueError, match="empty"):
            parse_graph_file("[concepts]\n[transitions]\n")

    def test_comments_and_blank_lines_ignored(self):
        text = "# header\n[concepts]\nA # trailing\n\nB\n[transitions]\nA -> B\n"
        assert parse_graph_file(text).n_concepts == 2

    def test_self_loop_allowed_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="intentgraph.graph"):
            g = ConceptGraph(["A"], [("A", "A")])
        assert g.n_transitions == 1
        assert any("self-loop" in r.message for r in caplog.records)

    def test_ids_follow_declaration_order(self):
        g = parse_graph_file("[concepts]\nZ\nA\nM\n[transitions]\nZ -> M\nA -> Z\n")
        assert [c.name for c in g.concepts] == ["Z", "A", "M"]
        assert (g.transitions[0].source, g.transitions[0].target) == (0, 2)


class TestTransferMatrix:
    def test_single_edge(self, two_node_graph):
        assert two_node_graph.transfer.tolist() == [[1.0], [1.0]]

    def test_fan_out(self):
        g = ConceptGraph(["A", "B", "C"], [("A", "B"), ("A", "C")])
        assert g.transfer.tolist() == [[1, 1], [1, 0], [0, 1]]

    def test_matches_incidence_oracle_on_random_graphs(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            g = random_graph(rng, max_concepts=6, max_transitions=10)
            a = build_transfer_matrix(g)
            # independent double loop over every (concept, transition) cell
            for m in range(g.n_concepts):
                for n in range(g.n_transitions):
                    t = g.transitions[n]
                    expected = 1.0 if m in (t.source, t.target) else 0.0
                    assert a[m, n] == expected

    def test_rebuild_is_bit_identical(self):
        rng = np.random.default_rng(12)
        g = random_graph(rng)
        first = build_transfer_matrix(g)
        second = build_transfer_matrix(g)
        assert np.array_equal(first, second)
        assert np.array_equal(first, g.transfer)

    def test_column_sums_and_total(self):
        g = ConceptGraph(["A", "B", "C"], [("A", "B"), ("C", "C"), ("B", "A")])
        sums = g.transfer.sum(axis=0)
        n_self = sum(1 for t in g.transitions if t.source == t.target)
        assert sums.tolist() == [2.0, 1.0, 2.0]
        assert g.transfer.sum() == 2 * g.n_transitions - n_self


class TestActiveSubgraph:
    def test_paper_chain(self, path_graph):
        active = active_subgraph(path_graph, [0, 1, 2], [0, 1])
        assert active.concept_ids == frozenset({0, 1, 2})
        assert active.transition_ids == frozenset({0, 1})

    def test_empty(self, path_graph):
        active = active_subgraph(path_graph, [], [])
        assert active.concept_ids == frozenset()
        assert active.transition_ids == frozenset()

    def test_out_of_range_transition(self, path_graph):
        with pytest.raises(ValueError, match="out of range"):
            active_subgraph(path_graph, [], [path_graph.n_transitions])

    def test_out_of_range_concept(self, path_graph):
        with pytest.raises(ValueError, match="out of range"):
            active_subgraph(path_graph, [3], [])

    def test_sets_are_subsets_of_parent(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            g = random_graph(rng)
            c = rng.choice(g.n_concepts, size=rng.integers(0, g.n_concepts + 1), replace=False)
            t = rng.choice(g.n_transitions, size=rng.integers(0, g.n_transitions + 1), replace=False)
            active = active_subgraph(g, c, t)
            assert all(0 <= i < g.n_concepts for i in active.concept_ids)
            assert all(0 <= i < g.n_transitions for i in active.transition_ids)


def union_find_components(nodes, edges) -> int:
    parent = {n: n for n in nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(n) for n in nodes})


class TestIsConnected:
    def test_chain_is_connected(self, path_graph):
        active = active_subgraph(path_graph, [0, 1, 2], [0, 1])
        assert is_connected(active, path_graph)

    def test_two_components(self):
        g = ConceptGraph(
            ["Symptom", "Disease", "Medicine", "Side Effect"],
            [("Symptom", "Disease"), ("Medicine", "Side Effect")],
        )
        active = active_subgraph(g, [], [0, 1])
        assert not is_connected(active, g)

    def test_empty_graph_connected_by_convention(self, path_graph):
        assert is_connected(active_subgraph(path_graph, [], []), path_graph)

    def test_isolated_concept_counts_as_component(self, path_graph):
        active = active_subgraph(path_graph, [0, 2], [])
        assert not is_connected(active, path_graph)

    def test_endpoints_count_even_without_concept_label(self, path_graph):
        # transition 0 alone: endpoints {0, 1} joined by the edge
        assert is_connected(active_subgraph(path_graph, [], [0]), path_graph)

    def test_against_union_find_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(200):
            g = random_graph(rng)
            c_ids = set(int(i) for i in
                        rng.choice(g.n_concepts, size=rng.integers(0, g.n_concepts + 1), replace=False))
            t_ids = set(int(i) for i in
                        rng.choice(g.n_transitions, size=rng.integers(0, g.n_transitions + 1), replace=False))
            active = ActiveConceptGraph(frozenset(c_ids), frozenset(t_ids))
            nodes = set(c_ids)
            edges = []
            for t in t_ids:
                tr = g.transitions[t]
                nodes.update((tr.source, tr.target))
                edges.append((tr.source, tr.target))
            expected = union_find_components(nodes, edges) == 1 if nodes else True
            assert is_connected(active, g) == expected


class TestGraphStats:
    def test_forced_count(self, two_node_graph):
        class Q:
            concept_labels = np.array([1.0, 0.0])
            transition_labels = np.array([0.0])

        stats = graph_stats([Q()] * 25, two_node_graph)
        assert stats.concept_counts["Symptom"] == 25
        assert stats.concept_counts["Cause"] == 0
        assert stats.n_queries == 25

    def test_synthetic_tallies_match_generator(self, diamond_graph):
        config = SyntheticConfig(n_queries=300, vocab_size=60, seed=3)
        records, tallies = generate_synthetic(diamond_graph, config)
        vocab = build_vocabulary(records)
        encoded = [encode(r, vocab, diamond_graph) for r in records]
        stats = graph_stats(encoded, diamond_graph, top_k=10 ** 6)
        for name in stats.concept_counts:
            assert stats.concept_counts[name] == tallies.concept_counts.get(name, 0)
        for name in stats.transition_counts:
            assert stats.transition_counts[name] == tallies.transition_counts.get(name, 0)
        assert sorted(stats.shape_counts) == sorted(tallies.shape_counts.items())

    def test_shapes_sorted_by_frequency(self, two_node_graph):
        class Q1:
            concept_labels = np.array([1.0, 1.0])
            transition_labels = np.array([1.0])

        class Q2:
            concept_labels = np.array([1.0, 0.0])
            transition_labels = np.array([0.0])

        stats = graph_stats([Q1(), Q1(), Q2()], two_node_graph, top_k=2)
        assert stats.shape_counts[0][1] == 2
        assert stats.shape_counts[1][1] == 1

    def test_connected_fraction_matches_union_find(self, diamond_graph):
        config = SyntheticConfig(n_queries=200, vocab_size=60, seed=9)
        records, _ = generate_synthetic(diamond_graph, config)
        vocab = build_vocabulary(records)
        encoded = [encode(r, vocab, diamond_graph) for r in records]
        stats = graph_stats(encoded, diamond_graph)
        expected = 0
        for q in encoded:
            nodes = set(int(i) for i in np.flatnonzero(q.concept_labels))
            edges = []
            for t in np.flatnonzero(q.transition_labels):
                tr = diamond_graph.transitions[int(t)]
                nodes.update((tr.source, tr.target))
                edges.append((tr.source, tr.target))
            if not nodes or union_find_components(nodes, edges) == 1:
                expected += 1
        assert stats.n_connected == expected
