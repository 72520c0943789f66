"""Scikit-learn style front door for the community-search network.

``fit`` takes an attributed graph plus a generated query workload,
``predict`` returns the member set for a new (nodes, attributes) query, and
``transform`` exports per-query node embeddings for downstream projection.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import evaluate
from .graphs import AttributedGraph, NormalizedViews
from .model import (ModelConfig, export_embedding, forward_batch,
                    precompute_graph_states)
from .queries import Query, QuerySet, query_inputs
from .train import Checkpoint, TrainConfig, binarize, train


class CommunitySearchGCN(BaseEstimator):
    """Query-driven GCN estimator over one attributed graph.

    Parameters mirror the published defaults: three layers with 128 hidden
    channels, concatenation fusion, dropout 0.5, 300 epochs of Adam at
    learning rate 0.001 with batch size 4, and a validation-calibrated
    decision threshold.
    """

    def __init__(self, num_layers=3, hidden_channels=128, aggregation="concat",
                 dropout=0.5, graph_encoder=True, structure_encoder=True,
                 attribute_encoder=True, feature_fusion=True,
                 learning_rate=0.001, epochs=300, batch_size=4,
                 validation_period=10, seed=0):
        self.num_layers = num_layers
        self.hidden_channels = hidden_channels
        self.aggregation = aggregation
        self.dropout = dropout
        self.graph_encoder = graph_encoder
        self.structure_encoder = structure_encoder
        self.attribute_encoder = attribute_encoder
        self.feature_fusion = feature_fusion
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_period = validation_period
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        channels = (self.hidden_channels,) * (self.num_layers - 1) + (1,)
        return ModelConfig(
            num_layers=self.num_layers, channels=channels,
            aggregation=self.aggregation, dropout=self.dropout,
            graph_encoder=self.graph_encoder,
            structure_encoder=self.structure_encoder,
            attribute_encoder=self.attribute_encoder,
            feature_fusion=self.feature_fusion).validate()

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size,
                           validation_period=self.validation_period,
                           seed=self.seed).validate()

    def fit(self, graph: AttributedGraph, query_set: QuerySet):
        self.checkpoint_: Checkpoint = train(
            graph, query_set, self._model_config(), self._train_config())
        self.graph_ = graph
        self.views_ = NormalizedViews.from_graph(graph)
        self.graph_cache_ = precompute_graph_states(self.views_,
                                                    self.checkpoint_.params)
        self.gamma_ = self.checkpoint_.gamma
        return self

    def _trace(self, query: Query):
        seed, f_q = query_inputs(self.graph_, query)
        return forward_batch(self.views_, [(seed, f_q)],
                             self.checkpoint_.params, "infer",
                             graph_cache=self.graph_cache_)[0]

    def predict_proba(self, query: Query) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        return self._trace(query).prediction

    def predict(self, query: Query) -> np.ndarray:
        """0/1 membership vector for the query's community."""
        return binarize(self.predict_proba(query), self.gamma_)

    def transform(self, queries) -> list[np.ndarray]:
        """Per-query node embeddings (last-layer encoder concatenation)."""
        check_is_fitted(self, "checkpoint_")
        return [export_embedding(self._trace(q)) for q in queries]

    def score(self, query_set: QuerySet, split: str = "test") -> float:
        check_is_fitted(self, "checkpoint_")
        return evaluate(self.checkpoint_, self.graph_, query_set, split).micro_f1
