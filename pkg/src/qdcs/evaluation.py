"""Test-set evaluation, per-query latency, and the ablation/sweep harnesses."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graphs import AttributedGraph, NormalizedViews
from .metrics import micro_jaccard, micro_precision_recall_f1
from .model import ModelConfig, forward_batch, precompute_graph_states
from .queries import QuerySet, query_inputs
from .train import Checkpoint, TrainConfig, binarize, train


@dataclass
class EvalReport:
    micro_precision: float
    micro_recall: float
    micro_f1: float
    micro_jaccard: float
    per_query_f1: list[float]
    per_query_jaccard: list[float]
    mean_latency_ms: float
    var_latency_ms: float
    dataset: str
    mode: str
    seed: int
    checkpoint_fingerprint: str
    gamma: float
    num_queries: int
    timing_includes_query_distance: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _per_query_scores(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    _, _, f1 = micro_precision_recall_f1([pred], [truth])
    return f1, micro_jaccard([pred], [truth])


def evaluate(checkpoint: Checkpoint, graph: AttributedGraph,
             query_set: QuerySet, split: str = "test") -> EvalReport:
    """Time one infer pass per query (seed construction included) and pool metrics."""
    if checkpoint.dataset_fingerprint != graph.fingerprint():
        raise ValueError("checkpoint was trained on a different dataset")
    queries = {"train": query_set.train, "val": query_set.validation,
               "test": query_set.test}[split]
    views = NormalizedViews.from_graph(graph)
    # the graph encoder is query independent; compute it once per checkpoint
    cache = precompute_graph_states(views, checkpoint.params)

    preds, truths, latencies = [], [], []
    for q in queries:
        start = time.perf_counter()
        seed, f_q = query_inputs(graph, q)
        trace = forward_batch(views, [(seed, f_q)], checkpoint.params, "infer",
                              graph_cache=cache)[0]
        pred = binarize(trace.prediction, checkpoint.gamma)
        latencies.append((time.perf_counter() - start) * 1000.0)
        preds.append(pred)
        truths.append(q.ground_truth(graph))

    pre, rec, f1 = micro_precision_recall_f1(preds, truths)
    jac = micro_jaccard(preds, truths)
    per_f1, per_jac = [], []
    for p, t in zip(preds, truths):
        a, b = _per_query_scores(p, t)
        per_f1.append(a)
        per_jac.append(b)
    lat = np.asarray(latencies)
    return EvalReport(
        micro_precision=pre, micro_recall=rec, micro_f1=f1, micro_jaccard=jac,
        per_query_f1=per_f1, per_query_jaccard=per_jac,
        mean_latency_ms=float(lat.mean()) if len(lat) else 0.0,
        var_latency_ms=float(lat.var()) if len(lat) else 0.0,
        dataset=graph.name, mode=query_set.mode, seed=query_set.seed,
        checkpoint_fingerprint=checkpoint.dataset_fingerprint,
        gamma=checkpoint.gamma, num_queries=len(queries))


ABLATION_VARIANTS = ("noGE", "noSE", "noAE", "noFF")


def ablation_config(base: ModelConfig, variant: str) -> ModelConfig:
    if variant == "noGE":
        return replace(base, graph_encoder=False)
    if variant == "noSE":
        return replace(base, structure_encoder=False)
    if variant == "noAE":
        return replace(base, attribute_encoder=False)
    if variant == "noFF":
        return replace(base, feature_fusion=False)
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(graph: AttributedGraph, query_set: QuerySet,
                 model_config: ModelConfig, train_config: TrainConfig,
                 variants=ABLATION_VARIANTS) -> dict[str, EvalReport]:
    """Train the full model plus each variant with shared seeds and test split."""
    reports: dict[str, EvalReport] = {}
    full = train(graph, query_set, model_config, train_config)
    reports["full"] = evaluate(full, graph, query_set)
    for variant in variants:
        ckpt = train(graph, query_set, ablation_config(model_config, variant),
                     train_config)
        reports[variant] = evaluate(ckpt, graph, query_set)
    return reports


def sweep_threshold(checkpoint: Checkpoint, graph: AttributedGraph,
                    query_set: QuerySet, grid) -> list[tuple[float, float]]:
    """Micro-F1 on the test split per threshold; z vectors computed once."""
    views = NormalizedViews.from_graph(graph)
    cache = precompute_graph_states(views, checkpoint.params)
    zs, truths = [], []
    for q in query_set.test:
        seed, f_q = query_inputs(graph, q)
        zs.append(forward_batch(views, [(seed, f_q)], checkpoint.params,
                                "infer", graph_cache=cache)[0].prediction)
        truths.append(q.ground_truth(graph))
    curve = []
    for gamma in grid:
        _, _, f1 = micro_precision_recall_f1([binarize(z, gamma) for z in zs], truths)
        curve.append((float(gamma), f1))
    return curve


def sweep_aggregation(graph: AttributedGraph, query_set: QuerySet,
                      model_config: ModelConfig, train_config: TrainConfig,
                      aggregations=("concat", "sum", "max", "min", "mean")
                      ) -> dict[str, float]:
    """Test micro-F1 per fusion aggregation, trained with identical seeds."""
    results = {}
    for agg in aggregations:
        ckpt = train(graph, query_set, replace(model_config, aggregation=agg),
                     train_config)
        results[agg] = evaluate(ckpt, graph, query_set).micro_f1
    return results


def write_curve(rows, path, header="x,value") -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(header + "\n")
        for x, v in rows:
            fh.write(f"{x},{v:.6f}\n")
    return path
