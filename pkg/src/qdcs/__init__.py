"""Query-driven graph convolutional network for attributed community search."""

from .estimator import CommunitySearchGCN
from .graphs import (AttributedGraph, NormalizedViews, load_canonical,
                     load_citation_dataset, load_ego_dataset, save_canonical)
from .model import ModelConfig
from .queries import Query, QuerySet, generate_query_set
from .train import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "AttributedGraph", "NormalizedViews", "CommunitySearchGCN", "ModelConfig",
    "Query", "QuerySet", "generate_query_set", "Checkpoint", "TrainConfig",
    "train", "save_checkpoint", "load_checkpoint", "load_citation_dataset",
    "load_ego_dataset", "load_canonical", "save_canonical",
]

__version__ = "0.1.0"
