"""Pinned benchmark and fixture definitions.

The synthetic corpora used by the acceptance suite are fully determined by
the graph files committed under ``data/`` and the generator configs below,
so regenerating them is bit-reproducible. The benchmark training config uses
smaller dimensions than the model defaults; the corpus vocabulary is only a
few hundred tokens and the acceptance budget is minutes, not GPU-hours.
"""

from __future__ import annotations

from importlib import resources

from .corpus import RawQuery, SyntheticConfig, GeneratorTallies, generate_synthetic
from .graph import ConceptGraph, parse_graph_file
from .harness import TrainConfig

BENCHMARK_SEED = 8117
FIXTURE_SEED = 4231

BENCHMARK_CORPUS = SyntheticConfig(
    n_queries=2000,
    vocab_size=300,
    seed=BENCHMARK_SEED,
    templates_per_transition=2,
    noise_rate=0.4,
    transition_count_weights=(0.35, 0.4, 0.25),
)

FIXTURE_CORPUS = SyntheticConfig(
    n_queries=400,
    vocab_size=80,
    seed=FIXTURE_SEED,
    templates_per_transition=2,
    noise_rate=0.25,
    transition_count_weights=(0.5, 0.5),
)


def _load_graph(name: str) -> ConceptGraph:
    text = resources.files("intentgraph.data").joinpath(name).read_text(encoding="utf-8")
    return parse_graph_file(text)


def medical_graph() -> ConceptGraph:
    """The 17-concept, 23-transition medical domain graph."""
    return _load_graph("medical_graph.txt")


def benchmark_graph() -> ConceptGraph:
    return _load_graph("benchmark_graph.txt")


def fixture_graph() -> ConceptGraph:
    return _load_graph("fixture_graph.txt")


def benchmark_corpus() -> tuple[ConceptGraph, list[RawQuery], GeneratorTallies]:
    graph = benchmark_graph()
    records, tallies = generate_synthetic(graph, BENCHMARK_CORPUS)
    return graph, records, tallies


def fixture_corpus() -> tuple[ConceptGraph, list[RawQuery], GeneratorTallies]:
    graph = fixture_graph()
    records, tallies = generate_synthetic(graph, FIXTURE_CORPUS)
    return graph, records, tallies


def benchmark_train_config(variant: str = "coCTI_MTL", seed: int = 0,
                           epochs: int = 50) -> TrainConfig:
    """Training hyperparameters pinned for the committed benchmark."""
    return TrainConfig(
        variant=variant,
        epochs=epochs,
        batch_size=32,
        lr=3e-3,
        seed=seed,
        patience=8,
        energy_weight=5.0,
        d_word=24,
        d_pos=8,
        d_hidden=24,
    )


def fixture_train_config(variant: str = "coCTI", seed: int = 0,
                         epochs: int = 30) -> TrainConfig:
    return TrainConfig(
        variant=variant,
        epochs=epochs,
        batch_size=32,
        lr=1e-2,
        seed=seed,
        patience=30,
        d_word=16,
        d_pos=8,
        d_hidden=16,
    )
