"""Hierarchical (k,t)-ring graph transformer embeddings for heterogeneous graphs."""

__version__ = "0.1.0"

from .graph import HinGraph, build_graph, load_graph, load_graph_dir, neighbors, save_graph
from .model import ModelConfig, ModelParams, forward, forward_variant, init_params
from .rings import RingPartition, TokenTensor, bfs_rings, pool_tokens, precompute_all
from .train import TrainConfig, train

__all__ = [
    "HinGraph",
    "ModelConfig",
    "ModelParams",
    "RingPartition",
    "TokenTensor",
    "TrainConfig",
    "bfs_rings",
    "build_graph",
    "forward",
    "forward_variant",
    "init_params",
    "load_graph",
    "load_graph_dir",
    "neighbors",
    "pool_tokens",
    "precompute_all",
    "save_graph",
    "train",
]
