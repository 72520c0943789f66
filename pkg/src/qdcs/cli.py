"""Command-line entry point for reproducible experiment runs.

Datasets are referenced by a path plus a format:

* ``citation``: path is a file prefix; ``<prefix>.content`` and
  ``<prefix>.cites`` must exist.
* ``ego``: path is a file prefix; ``<prefix>.edges``, ``.feat``,
  ``.egofeat`` and ``.circles`` must exist.
* ``canonical``: path is a directory produced by ``qdcs ingest``.

Exit codes: 0 success, 2 format error, 3 query generation error,
4 checkpoint/dataset incompatibility, 5 training divergence.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .evaluation import (ABLATION_VARIANTS, ablation_config, evaluate,
                         run_ablation, sweep_aggregation, sweep_threshold,
                         write_curve)
from .graphs import (AttributedGraph, DatasetFormatError, NormalizedViews,
                     load_canonical, load_citation_dataset, load_ego_dataset,
                     save_canonical)
from .model import (ModelConfig, export_embedding, forward_batch,
                    precompute_graph_states)
from .queries import (MODES, Query, QueryGenerationError, generate_query_set,
                      load_query_set, query_inputs, save_query_set)
from .train import (TrainConfig, TrainingDivergedError, binarize,
                    load_checkpoint, save_checkpoint, train, write_training_log)

EXIT_FORMAT = 2
EXIT_GENERATION = 3
EXIT_COMPAT = 4
EXIT_DIVERGED = 5

_DISABLE_FLAGS = {"ge": "graph_encoder", "se": "structure_encoder",
                  "ae": "attribute_encoder", "ff": "feature_fusion"}


def load_dataset(path: str, fmt: str) -> AttributedGraph:
    p = Path(path)
    try:
        if fmt == "canonical":
            return load_canonical(p)
        if fmt == "citation":
            return load_citation_dataset(p.with_suffix(".content"),
                                         p.with_suffix(".cites"), name=p.name)
        if fmt == "ego":
            return load_ego_dataset(p.with_suffix(".edges"), p.with_suffix(".feat"),
                                    p.with_suffix(".egofeat"), p.with_suffix(".circles"),
                                    name=f"FB-{p.name}")
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"missing dataset file: {exc.filename}")
    raise DatasetFormatError(f"unknown dataset format {fmt!r}")


def _read_config_file(config_path) -> dict:
    if config_path is None:
        return {}
    return json.loads(Path(config_path).read_text())


def build_configs(config_path, seed, disable, agg, epochs=None,
                  layers=None, hidden=None) -> tuple[ModelConfig, TrainConfig, dict]:
    """Config file first, then flag overrides; returns the merged run record."""
    raw = _read_config_file(config_path)
    model_raw = dict(raw.get("model", {}))
    train_raw = dict(raw.get("train", {}))
    for flag in disable:
        model_raw[_DISABLE_FLAGS[flag]] = False
    if agg is not None:
        model_raw["aggregation"] = agg
    if layers is not None:
        model_raw["num_layers"] = layers
    if hidden is not None or layers is not None:
        L = model_raw.get("num_layers", 3)
        h = hidden if hidden is not None else 128
        model_raw["channels"] = [h] * (L - 1) + [1]
    if seed is not None:
        train_raw["seed"] = seed
    if epochs is not None:
        train_raw["epochs"] = epochs
    model_config = ModelConfig(**{**ModelConfig().to_dict(), **model_raw,
                                  "channels": tuple(model_raw.get("channels",
                                                                  (128, 128, 1)))})
    train_config = TrainConfig(**{**TrainConfig().to_dict(), **train_raw,
                                  "gamma_grid": tuple(train_raw.get(
                                      "gamma_grid", TrainConfig().gamma_grid))})
    run_record = {"model": model_config.to_dict(), "train": train_config.to_dict()}
    return model_config.validate(), train_config.validate(), run_record


def _write_run_config(out_dir: Path, record: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n")


@click.group()
def main():
    """Query-driven GCN for attributed community search."""


@main.command()
@click.option("--dataset", required=True, help="source path (prefix or directory)")
@click.option("--format", "fmt", required=True,
              type=click.Choice(["citation", "ego", "canonical"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
def ingest(dataset, fmt, out_dir):
    """Convert a dataset to the canonical directory format."""
    try:
        graph = load_dataset(dataset, fmt)
    except DatasetFormatError as exc:
        click.echo(f"format error: {exc}", err=True)
        sys.exit(EXIT_FORMAT)
    save_canonical(graph, out_dir)
    avg = (sum(len(c) for c in graph.communities) / len(graph.communities)
           if graph.communities else 0.0)
    click.echo(f"{graph.name}: n={graph.n} m={graph.m} d={graph.d} "
               f"K={graph.num_communities} AS={avg:.2f}")


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--mode", required=True, type=click.Choice(list(MODES)))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--count", default=350, show_default=True, type=int)
@click.option("--split", default="150:100:100", show_default=True)
@click.option("--single-node", is_flag=True, help="one query node per query")
@click.option("--out", "out_path", required=True, type=click.Path())
def genqueries(dataset, mode, seed, count, split, single_node, out_path):
    """Generate a query workload file from a canonical dataset."""
    graph = load_canonical(dataset)
    parts = tuple(int(v) for v in split.split(":"))
    try:
        qs = generate_query_set(graph, mode, count=count, split=parts, seed=seed,
                                k_max=1 if single_node else 3)
    except (QueryGenerationError, ValueError) as exc:
        click.echo(f"generation error: {exc}", err=True)
        sys.exit(EXIT_GENERATION)
    save_query_set(qs, out_path)
    click.echo(f"wrote {count} queries to {out_path}")


def _train_once(dataset, queries, config, seed, disable, agg, epochs, out_dir):
    graph = load_canonical(dataset)
    qs = load_query_set(queries)
    model_config, train_config, record = build_configs(config, seed, disable,
                                                       agg, epochs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record["dataset"] = str(dataset)
    record["queries"] = str(queries)
    _write_run_config(out, record)
    ckpt = train(graph, qs, model_config, train_config,
                 log_path=out / "training_log.csv")
    save_checkpoint(ckpt, out / "checkpoint.npz")
    return graph, qs, ckpt, out


@main.command("train")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--seed", type=int)
@click.option("--epochs", type=int)
@click.option("--disable", multiple=True, type=click.Choice(list(_DISABLE_FLAGS)))
@click.option("--agg", type=click.Choice(["concat", "sum", "max", "min", "mean"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
def train_cmd(dataset, queries, config, seed, epochs, disable, agg, out_dir):
    """Train a model and write checkpoint + training log."""
    try:
        _, _, ckpt, out = _train_once(dataset, queries, config, seed, disable,
                                      agg, epochs, out_dir)
    except TrainingDivergedError as exc:
        click.echo(f"training diverged: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    click.echo(f"best val F1 {ckpt.val_f1:.4f} (gamma {ckpt.gamma:.2f}) "
               f"at epoch {ckpt.best_epoch}; checkpoint in {out}")


def _load_compatible(checkpoint, dataset):
    ckpt = load_checkpoint(checkpoint)
    graph = load_canonical(dataset)
    if ckpt.dataset_fingerprint != graph.fingerprint():
        click.echo("checkpoint/dataset fingerprint mismatch", err=True)
        sys.exit(EXIT_COMPAT)
    return ckpt, graph


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def eval_cmd(checkpoint, dataset, queries, out_path):
    """Evaluate a checkpoint on the test split and write a JSON report."""
    ckpt, graph = _load_compatible(checkpoint, dataset)
    report = evaluate(ckpt, graph, load_query_set(queries))
    report.save(out_path)
    click.echo(f"F1={report.micro_f1:.4f} Jaccard={report.micro_jaccard:.4f} "
               f"latency={report.mean_latency_ms:.2f}ms")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--nodes", required=True, help="comma-separated query node ids")
@click.option("--attrs", default="", help="comma-separated query attribute ids")
def predict(checkpoint, dataset, nodes, attrs):
    """Print the predicted community's node ids, ascending."""
    ckpt, graph = _load_compatible(checkpoint, dataset)
    node_ids = frozenset(int(v) for v in nodes.split(",") if v)
    attr_ids = frozenset(int(v) for v in attrs.split(",") if v)
    query = Query(node_ids, attr_ids, community_id=-1, mode="adhoc")
    seed, f_q = query_inputs(graph, query)
    views = NormalizedViews.from_graph(graph)
    trace = forward_batch(views, [(seed, f_q)], ckpt.params, "infer")[0]
    members = np.flatnonzero(binarize(trace.prediction, ckpt.gamma))
    click.echo(" ".join(map(str, members)))


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--seed", type=int)
@click.option("--epochs", type=int)
@click.option("--variants", default=",".join(ABLATION_VARIANTS), show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def ablate(dataset, queries, config, seed, epochs, variants, out_dir):
    """Train the full model and each ablation variant with shared seeds."""
    graph = load_canonical(dataset)
    qs = load_query_set(queries)
    model_config, train_config, record = build_configs(config, seed, (), None, epochs)
    out = Path(out_dir)
    _write_run_config(out, record)
    chosen = tuple(v for v in variants.split(",") if v)
    try:
        reports = run_ablation(graph, qs, model_config, train_config, chosen)
    except TrainingDivergedError as exc:
        click.echo(f"training diverged: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    for name, report in reports.items():
        report.save(out / f"report_{name}.json")
        click.echo(f"{name}: F1={report.micro_f1:.4f}")


@main.command("sweep-gamma")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def sweep_gamma_cmd(checkpoint, dataset, queries, out_path):
    """Emit the test-F1 curve over the threshold grid."""
    ckpt, graph = _load_compatible(checkpoint, dataset)
    curve = sweep_threshold(ckpt, graph, load_query_set(queries),
                            ckpt.train_config.gamma_grid)
    write_curve(curve, out_path, header="gamma,f1")
    click.echo(f"wrote {len(curve)} points to {out_path}")


@main.command("sweep-agg")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--seed", type=int)
@click.option("--epochs", type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def sweep_agg_cmd(dataset, queries, config, seed, epochs, out_path):
    """Emit test-F1 per fusion aggregation function."""
    graph = load_canonical(dataset)
    qs = load_query_set(queries)
    model_config, train_config, _ = build_configs(config, seed, (), None, epochs)
    results = sweep_aggregation(graph, qs, model_config, train_config)
    write_curve(sorted(results.items()), out_path, header="aggregation,f1")
    for agg, f1 in sorted(results.items()):
        click.echo(f"{agg}: F1={f1:.4f}")


@main.command("export-embeddings")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
def export_embeddings_cmd(checkpoint, dataset, queries, split, out_dir):
    """Write one tab-separated embedding file per query (one row per node)."""
    ckpt, graph = _load_compatible(checkpoint, dataset)
    qs = load_query_set(queries)
    chosen = {"train": qs.train, "val": qs.validation, "test": qs.test}[split]
    views = NormalizedViews.from_graph(graph)
    cache = precompute_graph_states(views, ckpt.params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, q in enumerate(chosen):
        seed, f_q = query_inputs(graph, q)
        trace = forward_batch(views, [(seed, f_q)], ckpt.params, "infer",
                              graph_cache=cache)[0]
        emb = export_embedding(trace)
        np.savetxt(out / f"query_{i:04d}.tsv", emb, delimiter="\t", fmt="%.10g")
    click.echo(f"wrote {len(chosen)} embedding files to {out}")


if __name__ == "__main__":
    main()
