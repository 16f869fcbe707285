"""Generative multi-label zero-shot learning on a graph autodiff core.

The package synthesizes multi-label visual features from class-attribute
embeddings (attribute-level, feature-level, or cross-level fusion),
trains the generator adversarially with a gradient-penalty critic under
a plain or variational objective, and evaluates zero-shot and
generalized zero-shot classifiers built from the synthesized features.
"""

from .classifiers import (
    ClassifierConfig,
    MultiLabelClassifier,
    fit_linear,
    predict_scores,
    train_gzsl,
    train_zsl,
)
from .data import (
    ClassSpace,
    DataFormatError,
    EmbeddingTable,
    MultiLabelInstance,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    load_embeddings,
    load_features,
    save_embeddings,
    save_features,
)
from .diffmath import Graph, GraphError, backward, evaluate, grad_as_graph
from .fusion import (
    MODES,
    GeneratorBundle,
    alf_fuse,
    clf_fuse,
    init_generator,
    synthesize,
    synthesize_batch,
)
from .gan import (
    OBJECTIVES,
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    ZslModels,
    classifier_regularizer,
    critic_loss,
    gradient_penalty,
    synthesize_unseen,
    train,
    vae_losses,
)
from .metrics import EvalTable, MetricsError, average_precision, mean_ap, topk_prf

__version__ = "0.1.0"

__all__ = [
    "ClassSpace",
    "ClassifierConfig",
    "DataFormatError",
    "EmbeddingTable",
    "EvalTable",
    "GeneratorBundle",
    "Graph",
    "GraphError",
    "MODES",
    "MetricsError",
    "MultiLabelClassifier",
    "MultiLabelInstance",
    "OBJECTIVES",
    "SyntheticConfig",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "ZslModels",
    "alf_fuse",
    "average_precision",
    "backward",
    "classifier_regularizer",
    "clf_fuse",
    "critic_loss",
    "evaluate",
    "fit_linear",
    "generate_synthetic",
    "grad_as_graph",
    "gradient_penalty",
    "init_generator",
    "load_dataset",
    "load_embeddings",
    "load_features",
    "mean_ap",
    "predict_scores",
    "save_embeddings",
    "save_features",
    "synthesize",
    "synthesize_batch",
    "synthesize_unseen",
    "topk_prf",
    "train",
    "train_gzsl",
    "train_zsl",
    "vae_losses",
]
