"""Graph network over feature-map patches with percentile-erased
attention adjacency, on a small from-scratch autodiff engine."""

from ._kernels import active_backend
from .attention import (
    ErasedAdjacency,
    SimilarityParams,
    attention_adjacency,
    erase,
    percentile_threshold,
    similarity,
)
from .blocks import BlockParams, block_forward, graph_propagate, stack_forward
from .data import SyntheticDataset, SyntheticSpec, generate_dataset
from .losses import LossConfig, id_loss, total_loss, triplet_loss
from .metrics import average_precision, cmc, evaluate_retrieval, rank_gallery
from .model import (
    ForwardOutputs,
    ModelConfig,
    ModelParams,
    init_model,
    model_forward,
    named_parameters,
)
from .tensor import GradientError, ShapeError, Tape, Tensor, backward
from .train import TrainConfig, ablate_percentiles, evaluate_model, train_model

__version__ = "0.1.0"

__all__ = [
    "ErasedAdjacency",
    "SimilarityParams",
    "attention_adjacency",
    "erase",
    "percentile_threshold",
    "similarity",
    "BlockParams",
    "block_forward",
    "graph_propagate",
    "stack_forward",
    "SyntheticDataset",
    "SyntheticSpec",
    "generate_dataset",
    "LossConfig",
    "id_loss",
    "total_loss",
    "triplet_loss",
    "average_precision",
    "cmc",
    "evaluate_retrieval",
    "rank_gallery",
    "ForwardOutputs",
    "ModelConfig",
    "ModelParams",
    "init_model",
    "model_forward",
    "named_parameters",
    "GradientError",
    "ShapeError",
    "Tape",
    "Tensor",
    "backward",
    "TrainConfig",
    "ablate_percentiles",
    "evaluate_model",
    "train_model",
    "active_backend",
    "__version__",
]
