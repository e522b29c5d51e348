"""Latent graph inference with probability passing and anchor-based message passing."""

from .config import ExperimentConfig, TrainConfig, load_config
from .graph import GraphDataset, SparseAdjacency, generate_sbm, load_dataset, perturb_edges
from .model import GraphContext, Model
from .training import evaluate, fit

__all__ = [
    "ExperimentConfig",
    "GraphContext",
    "GraphDataset",
    "Model",
    "SparseAdjacency",
    "TrainConfig",
    "evaluate",
    "fit",
    "generate_sbm",
    "load_config",
    "load_dataset",
    "perturb_edges",
]

__version__ = "0.1.0"
