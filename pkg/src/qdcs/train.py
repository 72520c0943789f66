"""Training loop, threshold calibration, and checkpoint serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tape, Tensor
from .graphs import AttributedGraph, NormalizedViews
from .metrics import micro_jaccard, micro_precision_recall_f1
from .model import (ForwardTrace, ModelConfig, ModelParams, forward_batch,
                    init_params, precompute_graph_states)
from .optim import Adam
from .queries import Query, QuerySet, query_inputs
from .rng import seeded_rng

CHECKPOINT_FORMAT_VERSION = 1

DEFAULT_GAMMA_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


class TrainingDivergedError(Exception):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 300
    batch_size: int = 4
    validation_period: int = 10
    seed: int = 0
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    clip_norm: float | None = None

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if any(not 0.0 < g < 1.0 for g in self.gamma_grid):
            raise ValueError("gamma grid must lie inside (0, 1)")
        return self

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate, "epochs": self.epochs,
                "batch_size": self.batch_size,
                "validation_period": self.validation_period, "seed": self.seed,
                "gamma_grid": list(self.gamma_grid), "clip_norm": self.clip_norm}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data["gamma_grid"] = tuple(data["gamma_grid"])
        return cls(**data).validate()


@dataclass
class Checkpoint:
    params: ModelParams
    gamma: float
    val_f1: float
    train_config: TrainConfig
    model_config: ModelConfig
    dataset_fingerprint: str
    best_epoch: int = 0
    log: list[dict] = field(default_factory=list)


def binarize(z: np.ndarray, gamma: float) -> np.ndarray:
    """Threshold the probability vector; the boundary is inclusive."""
    return (np.asarray(z) >= gamma).astype(np.int64)


def select_threshold(predictions, truths, grid=DEFAULT_GAMMA_GRID) -> float:
    """Grid value maximizing micro-F1; ties resolve toward 0.5 then downward."""
    best = None
    for gamma in grid:
        _, _, f1 = micro_precision_recall_f1(
            [binarize(z, gamma) for z in predictions], truths)
        key = (-f1, abs(gamma - 0.5), gamma)
        if best is None or key < best[0]:
            best = (key, gamma)
    return best[1]


def _infer_predictions(views: NormalizedViews, inputs, params: ModelParams):
    cache = precompute_graph_states(views, params)
    return [forward_batch(views, [qi], params, "infer",
                          graph_cache=cache)[0].prediction
            for qi in inputs]


def train(graph: AttributedGraph, query_set: QuerySet, model_config: ModelConfig,
          train_config: TrainConfig,
          log_path=None) -> Checkpoint:
    """Optimize summed per-query cross entropy; keep the best validation state.

    One epoch is a full shuffled pass over the training queries in batches.
    Validation every ``validation_period`` epochs calibrates the threshold on
    the validation split and retains the (params, gamma) with best micro-F1.
    """
    model_config.validate()
    train_config.validate()
    if not query_set.train:
        raise ValueError("training query set is empty")
    views = NormalizedViews.from_graph(graph)
    fingerprint = graph.fingerprint()

    train_inputs = [query_inputs(graph, q) for q in query_set.train]
    train_truths = [q.ground_truth(graph) for q in query_set.train]
    val_inputs = [query_inputs(graph, q) for q in query_set.validation]
    val_truths = [q.ground_truth(graph) for q in query_set.validation]

    params = init_params(model_config, graph.n, graph.d, train_config.seed)
    optimizer = Adam(params.trainable(), lr=train_config.learning_rate,
                     clip_norm=train_config.clip_norm)
    shuffle_rng = seeded_rng(train_config.seed, "shuffle")
    dropout_rng = seeded_rng(train_config.seed, "dropout")

    best: Checkpoint | None = None
    log_rows: list[dict] = []

    def validate(epoch: int, epoch_loss: float):
        nonlocal best
        if not val_inputs:
            gamma, f1, jac = 0.5, 0.0, 0.0
        else:
            zs = _infer_predictions(views, val_inputs, params)
            gamma = select_threshold(zs, val_truths, train_config.gamma_grid)
            preds = [binarize(z, gamma) for z in zs]
            _, _, f1 = micro_precision_recall_f1(preds, val_truths)
            jac = micro_jaccard(preds, val_truths)
        row = {"epoch": epoch, "train_loss": epoch_loss, "val_f1": f1,
               "val_jaccard": jac, "gamma": gamma}
        log_rows.append(row)
        if best is None or f1 > best.val_f1:
            best = Checkpoint(params=params.copy(), gamma=gamma, val_f1=f1,
                              train_config=train_config, model_config=model_config,
                              dataset_fingerprint=fingerprint, best_epoch=epoch)

    if train_config.epochs == 0:
        validate(0, float("nan"))
    order = np.arange(len(train_inputs))
    for epoch in range(1, train_config.epochs + 1):
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            params.zero_grad()
            with Tape() as tape:
                traces = forward_batch(views, [train_inputs[i] for i in batch],
                                       params, "train", dropout_rng)
                loss = ad.add_scalars([ad.bce_loss(t.z, train_truths[i].reshape(-1, 1))
                                       for t, i in zip(traces, batch)])
                tape.backward(loss)
            batch_loss = float(loss.data[0, 0])
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(epoch)
            epoch_loss += batch_loss
            optimizer.step()
        if epoch % train_config.validation_period == 0 or epoch == train_config.epochs:
            validate(epoch, epoch_loss)

    assert best is not None
    best.log = log_rows
    if log_path is not None:
        write_training_log(log_rows, log_path)
    return best


def write_training_log(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("epoch,train_loss,val_F1,val_Jaccard,gamma\n")
        for r in rows:
            fh.write(f"{r['epoch']},{r['train_loss']:.6f},{r['val_f1']:.6f},"
                     f"{r['val_jaccard']:.6f},{r['gamma']:.2f}\n")
    return path


# ---------------------------------------------------------------------------
# checkpoint persistence


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for key, t in ckpt.params.weights.items():
        arrays[f"w::{key}"] = t.data
    for key, bn in ckpt.params.batch_norms.items():
        arrays[f"bn::{key}::gamma"] = bn.gamma.data
        arrays[f"bn::{key}::beta"] = bn.beta.data
        arrays[f"bn::{key}::running_mean"] = bn.running_mean
        arrays[f"bn::{key}::running_var"] = bn.running_var
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "gamma": ckpt.gamma,
        "val_f1": ckpt.val_f1,
        "best_epoch": ckpt.best_epoch,
        "dataset_fingerprint": ckpt.dataset_fingerprint,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
    }
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        model_config = ModelConfig.from_dict(meta["model_config"])
        weights: dict[str, Tensor] = {}
        bns: dict[str, BatchNormState] = {}
        for name in data.files:
            if name.startswith("w::"):
                weights[name[3:]] = Tensor(data[name], requires_grad=True)
            elif name.startswith("bn::") and name.endswith("::gamma"):
                key = name.split("::")[1]
                bn = BatchNormState(data[name].shape[1])
                bn.gamma.data[:] = data[f"bn::{key}::gamma"]
                bn.beta.data[:] = data[f"bn::{key}::beta"]
                bn.running_mean = data[f"bn::{key}::running_mean"].copy()
                bn.running_var = data[f"bn::{key}::running_var"].copy()
                bns[key] = bn
    params = ModelParams(weights=weights, batch_norms=bns, config=model_config)
    return Checkpoint(params=params, gamma=meta["gamma"], val_f1=meta["val_f1"],
                      train_config=TrainConfig.from_dict(meta["train_config"]),
                      model_config=model_config,
                      dataset_fingerprint=meta["dataset_fingerprint"],
                      best_epoch=meta["best_epoch"])
