import numpy as np
import pytest

from qdcs import autodiff as ad
from qdcs.autodiff import Tape, Tensor
from qdcs.metrics import micro_precision_recall_f1
from qdcs.model import ModelConfig
from qdcs.queries import generate_query_set
from qdcs.train import (DEFAULT_GAMMA_GRID, Checkpoint, TrainConfig,
                        TrainingDivergedError, binarize, load_checkpoint,
                        save_checkpoint, select_threshold, train,
                        write_training_log)

SMALL_MODEL = ModelConfig(num_layers=2, channels=(4, 1), dropout=0.1)


def small_workload(graph, seed=0):
    return generate_query_set(graph, "community-attrs", count=12,
                              split=(6, 3, 3), seed=seed)


# ---------------------------------------------------------------------------
# thresholding


def test_binarize_boundary_is_inclusive():
    z = np.array([0.29, 0.3, 0.31])
    assert binarize(z, 0.3).tolist() == [0, 1, 1]


def test_gamma_grid_values():
    assert DEFAULT_GAMMA_GRID[0] == 0.05
    assert DEFAULT_GAMMA_GRID[-1] == 0.95
    assert len(DEFAULT_GAMMA_GRID) == 19
    assert np.allclose(np.diff(DEFAULT_GAMMA_GRID), 0.05)


def brute_force_threshold(predictions, truths, grid):
    scored = []
    for gamma in grid:
        _, _, f1 = micro_precision_recall_f1(
            [(z >= gamma).astype(int) for z in predictions], truths)
        scored.append((f1, gamma))
    best_f1 = max(s[0] for s in scored)
    candidates = [g for f1, g in scored if f1 == best_f1]
    return min(candidates, key=lambda g: (abs(g - 0.5), g))


def test_select_threshold_matches_brute_force():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(3, 20))
        preds = [rng.random(n) for _ in range(3)]
        truths = [(rng.random(n) < 0.5).astype(int) for _ in range(3)]
        assert select_threshold(preds, truths) == brute_force_threshold(
            preds, truths, DEFAULT_GAMMA_GRID)


def test_select_threshold_tie_breaks_toward_half():
    # constant predictions make every threshold below 0.6 equivalent
    preds = [np.array([0.6, 0.6, 0.1])]
    truths = [np.array([1, 1, 0])]
    assert select_threshold(preds, truths) == 0.5


def test_select_threshold_equidistant_tie_prefers_smaller():
    preds = [np.array([1.0])]
    truths = [np.array([1])]
    assert select_threshold(preds, truths, grid=(0.45, 0.55)) == 0.45


# ---------------------------------------------------------------------------
# config validation


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1).validate()
    with pytest.raises(ValueError):
        TrainConfig(gamma_grid=(0.0, 0.5)).validate()
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_diverged_error_carries_epoch():
    err = TrainingDivergedError(7)
    assert err.epoch == 7 and "7" in str(err)


# ---------------------------------------------------------------------------
# the loop


def test_training_reduces_loss(clique_ring):
    qs = small_workload(clique_ring)
    cfg = TrainConfig(epochs=120, batch_size=4, validation_period=20, seed=0)
    ckpt = train(clique_ring, qs, SMALL_MODEL, cfg)
    losses = [row["train_loss"] for row in ckpt.log]
    assert losses[-1] < losses[0]
    # an uninformed predictor at z = 0.5 scores ln 2 per node per query
    chance = len(qs.train) * clique_ring.n * np.log(2)
    assert losses[-1] < 0.5 * chance
    assert 0.0 <= ckpt.val_f1 <= 1.0
    assert ckpt.gamma in DEFAULT_GAMMA_GRID
    assert ckpt.dataset_fingerprint == clique_ring.fingerprint()


def test_training_is_deterministic(clique_ring):
    qs = small_workload(clique_ring)
    cfg = TrainConfig(epochs=6, batch_size=4, validation_period=3, seed=1)
    a = train(clique_ring, qs, SMALL_MODEL, cfg)
    b = train(clique_ring, qs, SMALL_MODEL, cfg)
    assert a.gamma == b.gamma and a.val_f1 == b.val_f1
    for key in a.params.weights:
        assert np.array_equal(a.params.weights[key].data,
                              b.params.weights[key].data)
    for key in a.params.batch_norms:
        assert np.array_equal(a.params.batch_norms[key].running_mean,
                              b.params.batch_norms[key].running_mean)


def test_zero_epochs_yields_initial_state(clique_ring):
    qs = small_workload(clique_ring)
    ckpt = train(clique_ring, qs, SMALL_MODEL, TrainConfig(epochs=0, seed=0))
    assert ckpt.best_epoch == 0
    assert len(ckpt.log) == 1


def test_validation_cadence(clique_ring):
    qs = small_workload(clique_ring)
    ckpt = train(clique_ring, qs, SMALL_MODEL,
                 TrainConfig(epochs=7, batch_size=6, validation_period=3, seed=0))
    assert [row["epoch"] for row in ckpt.log] == [3, 6, 7]


def test_empty_training_split_rejected(clique_ring):
    qs = small_workload(clique_ring)
    qs.train = []
    with pytest.raises(ValueError):
        train(clique_ring, qs, SMALL_MODEL, TrainConfig(epochs=1))


def test_batch_loss_is_additive():
    zs = [Tensor([[0.3], [0.8]]), Tensor([[0.6], [0.1]])]
    ys = [np.array([[1.0], [0.0]]), np.array([[1.0], [1.0]])]
    with Tape():
        total = ad.add_scalars([ad.bce_loss(z, y) for z, y in zip(zs, ys)])
        parts = [ad.bce_loss(z, y).data[0, 0] for z, y in zip(zs, ys)]
    assert total.data[0, 0] == pytest.approx(sum(parts))


# ---------------------------------------------------------------------------
# logging and persistence


def test_write_training_log(tmp_path):
    rows = [{"epoch": 10, "train_loss": 1.25, "val_f1": 0.5,
             "val_jaccard": 0.4, "gamma": 0.45}]
    path = write_training_log(rows, tmp_path / "log.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_F1,val_Jaccard,gamma"
    assert lines[1] == "10,1.250000,0.500000,0.400000,0.45"


def test_checkpoint_roundtrip_is_bitwise(clique_ring, tmp_path):
    qs = small_workload(clique_ring)
    ckpt = train(clique_ring, qs, SMALL_MODEL,
                 TrainConfig(epochs=4, batch_size=4, validation_period=2, seed=2))
    path = save_checkpoint(ckpt, tmp_path / "ckpt.npz")
    loaded = load_checkpoint(path)
    assert loaded.gamma == ckpt.gamma
    assert loaded.val_f1 == ckpt.val_f1
    assert loaded.best_epoch == ckpt.best_epoch
    assert loaded.model_config == ckpt.model_config
    assert loaded.train_config == ckpt.train_config
    assert loaded.dataset_fingerprint == ckpt.dataset_fingerprint
    for key in ckpt.params.weights:
        assert np.array_equal(loaded.params.weights[key].data,
                              ckpt.params.weights[key].data)
    for key in ckpt.params.batch_norms:
        for attr in ("running_mean", "running_var"):
            assert np.array_equal(getattr(loaded.params.batch_norms[key], attr),
                                  getattr(ckpt.params.batch_norms[key], attr))
        assert np.array_equal(loaded.params.batch_norms[key].gamma.data,
                              ckpt.params.batch_norms[key].gamma.data)


def test_loaded_checkpoint_predicts_identically(clique_ring, tmp_path):
    from qdcs.evaluation import evaluate
    qs = small_workload(clique_ring)
    ckpt = train(clique_ring, qs, SMALL_MODEL,
                 TrainConfig(epochs=4, batch_size=4, validation_period=2, seed=3))
    loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "c.npz"))
    a = evaluate(ckpt, clique_ring, qs)
    b = evaluate(loaded, clique_ring, qs)
    assert a.micro_f1 == b.micro_f1
    assert a.per_query_f1 == b.per_query_f1
