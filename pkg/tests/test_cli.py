import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import CITES_LINES, CONTENT_LINES
from qdcs.cli import main
from qdcs.graphs import load_canonical, save_canonical
from qdcs.queries import load_query_set

SMALL_CONFIG = {
    "model": {"num_layers": 2, "channels": [4, 1], "dropout": 0.1},
    "train": {"epochs": 4, "batch_size": 4, "validation_period": 2, "seed": 0},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Canonical dataset, query file, config, and a trained run directory."""
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.content").write_text(CONTENT_LINES)
    (root / "tiny.cites").write_text(CITES_LINES)
    (root / "config.json").write_text(json.dumps(SMALL_CONFIG))
    runner = CliRunner()

    result = runner.invoke(main, ["ingest", "--dataset", str(root / "tiny"),
                                  "--format", "citation",
                                  "--out", str(root / "canon")])
    assert result.exit_code == 0, result.output

    result = runner.invoke(main, ["genqueries", "--dataset", str(root / "canon"),
                                  "--mode", "community-attrs", "--seed", "1",
                                  "--count", "12", "--split", "6:3:3",
                                  "--out", str(root / "queries.jsonl")])
    assert result.exit_code == 0, result.output

    result = runner.invoke(main, ["train", "--dataset", str(root / "canon"),
                                  "--queries", str(root / "queries.jsonl"),
                                  "--config", str(root / "config.json"),
                                  "--out", str(root / "run")])
    assert result.exit_code == 0, result.output
    return root


def test_ingest_reports_statistics(workspace):
    graph = load_canonical(workspace / "canon")
    assert (graph.n, graph.m, graph.d, graph.num_communities) == (5, 3, 3, 2)
    meta = json.loads((workspace / "canon" / "meta.json").read_text())
    assert meta["n"] == 5 and meta["K"] == 2


def test_ingest_missing_file_exits_2(tmp_path):
    result = CliRunner().invoke(main, ["ingest", "--dataset",
                                       str(tmp_path / "absent"),
                                       "--format", "citation",
                                       "--out", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_ingest_malformed_file_exits_2(tmp_path):
    (tmp_path / "bad.content").write_text("p0 A\n")
    (tmp_path / "bad.cites").write_text("")
    result = CliRunner().invoke(main, ["ingest", "--dataset",
                                       str(tmp_path / "bad"),
                                       "--format", "citation",
                                       "--out", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_genqueries_writes_valid_workload(workspace):
    qs = load_query_set(workspace / "queries.jsonl")
    assert (len(qs.train), len(qs.validation), len(qs.test)) == (6, 3, 3)
    assert qs.mode == "community-attrs" and qs.seed == 1


def test_genqueries_bad_split_exits_3(workspace):
    result = CliRunner().invoke(main, ["genqueries", "--dataset",
                                       str(workspace / "canon"),
                                       "--mode", "none", "--count", "10",
                                       "--split", "1:1:1",
                                       "--out", str(workspace / "nope.jsonl")])
    assert result.exit_code == 3


def test_train_writes_artifacts(workspace):
    run = workspace / "run"
    assert (run / "checkpoint.npz").exists()
    assert (run / "training_log.csv").read_text().startswith(
        "epoch,train_loss,val_F1,val_Jaccard,gamma")
    record = json.loads((run / "run_config.json").read_text())
    assert record["model"]["num_layers"] == 2
    assert record["train"]["epochs"] == 4


def test_train_flag_overrides(workspace, tmp_path):
    result = CliRunner().invoke(main, [
        "train", "--dataset", str(workspace / "canon"),
        "--queries", str(workspace / "queries.jsonl"),
        "--config", str(workspace / "config.json"),
        "--epochs", "2", "--disable", "ff", "--agg", "sum",
        "--out", str(tmp_path / "run2")])
    assert result.exit_code == 0, result.output
    record = json.loads((tmp_path / "run2" / "run_config.json").read_text())
    assert record["train"]["epochs"] == 2
    assert record["model"]["feature_fusion"] is False
    assert record["model"]["aggregation"] == "sum"


def test_eval_writes_report(workspace, tmp_path):
    report_path = tmp_path / "report.json"
    result = CliRunner().invoke(main, [
        "eval", "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
        "--dataset", str(workspace / "canon"),
        "--queries", str(workspace / "queries.jsonl"),
        "--out", str(report_path)])
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text())
    assert report["num_queries"] == 3
    assert 0.0 <= report["micro_f1"] <= 1.0
    assert report["mean_latency_ms"] > 0.0


def test_eval_fingerprint_mismatch_exits_4(workspace, tmp_path, clique_ring):
    save_canonical(clique_ring, tmp_path / "other")
    result = CliRunner().invoke(main, [
        "eval", "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
        "--dataset", str(tmp_path / "other"),
        "--queries", str(workspace / "queries.jsonl"),
        "--out", str(tmp_path / "r.json")])
    assert result.exit_code == 4


def test_predict_prints_sorted_members(workspace):
    result = CliRunner().invoke(main, [
        "predict", "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
        "--dataset", str(workspace / "canon"),
        "--nodes", "0", "--attrs", "0,2"])
    assert result.exit_code == 0, result.output
    members = [int(v) for v in result.output.split()]
    assert members == sorted(members)
    assert all(0 <= v < 5 for v in members)


def test_sweep_gamma_emits_full_curve(workspace, tmp_path):
    curve_path = tmp_path / "curve.csv"
    result = CliRunner().invoke(main, [
        "sweep-gamma", "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
        "--dataset", str(workspace / "canon"),
        "--queries", str(workspace / "queries.jsonl"),
        "--out", str(curve_path)])
    assert result.exit_code == 0, result.output
    lines = curve_path.read_text().splitlines()
    assert lines[0] == "gamma,f1"
    assert len(lines) == 1 + 19


def test_export_embeddings(workspace, tmp_path):
    out = tmp_path / "emb"
    result = CliRunner().invoke(main, [
        "export-embeddings", "--checkpoint",
        str(workspace / "run" / "checkpoint.npz"),
        "--dataset", str(workspace / "canon"),
        "--queries", str(workspace / "queries.jsonl"),
        "--out", str(out)])
    assert result.exit_code == 0, result.output
    files = sorted(out.glob("query_*.tsv"))
    assert len(files) == 3
    emb = np.loadtxt(files[0], delimiter="\t")
    assert emb.shape == (5, 3)


def test_ablate_single_variant(workspace, tmp_path):
    result = CliRunner().invoke(main, [
        "ablate", "--dataset", str(workspace / "canon"),
        "--queries", str(workspace / "queries.jsonl"),
        "--config", str(workspace / "config.json"),
        "--variants", "noFF", "--out", str(tmp_path / "abl")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "abl" / "report_full.json").exists()
    assert (tmp_path / "abl" / "report_noFF.json").exists()
