import numpy as np
import pytest

from intentgraph.graph import ConceptGraph


@pytest.fixture
def two_node_graph():
    return ConceptGraph(["Symptom", "Cause"], [("Symptom", "Cause")])


@pytest.fixture
def path_graph():
    return ConceptGraph(
        ["Disease", "Surgery", "Recover"],
        [("Disease", "Surgery"), ("Surgery", "Recover")],
    )


@pytest.fixture
def diamond_graph():
    """4 concepts, 4 transitions; used when labels need a bit of structure."""
    return ConceptGraph(
        ["Symptom", "Disease", "Medicine", "Treatment"],
        [("Symptom", "Disease"), ("Symptom", "Medicine"),
         ("Disease", "Medicine"), ("Disease", "Treatment")],
    )


def random_graph(rng: np.random.Generator, max_concepts: int = 10,
                 max_transitions: int = 20, allow_self_loops: bool = False) -> ConceptGraph:
    m = int(rng.integers(2, max_concepts + 1))
    names = [f"C{i}" for i in range(m)]
    pairs = [(i, j) for i in range(m) for j in range(m) if allow_self_loops or i != j]
    n = int(rng.integers(1, min(max_transitions, len(pairs)) + 1))
    chosen = rng.choice(len(pairs), size=n, replace=False)
    edges = [(names[pairs[int(k)][0]], names[pairs[int(k)][1]]) for k in chosen]
    return ConceptGraph(names, edges)
