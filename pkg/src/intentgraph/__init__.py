"""Graph-structured intent detection: joint concept and transition inference."""

from .graph import (ActiveConceptGraph, Concept, ConceptGraph, Transition,
                    active_subgraph, build_transfer_matrix, graph_stats,
                    is_connected, parse_graph_file)
from .corpus import (DatasetSplit, EncodedQuery, RawQuery, SyntheticConfig,
                     Vocabulary, build_vocabulary, encode, generate_synthetic,
                     parse_record, serialize_record, split_dataset)
from .autodiff import Adam, DiffNode, NonFiniteError, backward, xavier_init
from .model import (ModelConfig, ModelParams, Prediction, forward, forward_batch)
from .losses import (LossVariant, cross_entropy, energy, energy_count,
                     loss_for_variant, mutual_transfer_loss, ranking_loss_count,
                     ranking_loss_surrogate)
from .metrics import EvalBatch, RocCurve, coverage_error, lrap, micro_macro_auc, roc_and_auc
from .harness import (TrainConfig, RunReport, compare_variants, cross_validate,
                      evaluate, lr_baseline, train)

__version__ = "0.1.0"

__all__ = [
    "ActiveConceptGraph", "Concept", "ConceptGraph", "Transition",
    "active_subgraph", "build_transfer_matrix", "graph_stats", "is_connected",
    "parse_graph_file",
    "DatasetSplit", "EncodedQuery", "RawQuery", "SyntheticConfig", "Vocabulary",
    "build_vocabulary", "encode", "generate_synthetic", "parse_record",
    "serialize_record", "split_dataset",
    "Adam", "DiffNode", "NonFiniteError", "backward", "xavier_init",
    "ModelConfig", "ModelParams", "Prediction", "forward", "forward_batch",
    "LossVariant", "cross_entropy", "energy", "energy_count", "loss_for_variant",
    "mutual_transfer_loss", "ranking_loss_count", "ranking_loss_surrogate",
    "EvalBatch", "RocCurve", "coverage_error", "lrap", "micro_macro_auc",
    "roc_and_auc",
    "TrainConfig", "RunReport", "compare_variants", "cross_validate", "evaluate",
    "lr_baseline", "train",
    "__version__",
]
