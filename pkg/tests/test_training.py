import csv

import numpy as np
import pytest

from mcm.data import DatasetSplit, build_vocab, stratified_split
from mcm.embeddings import EmbeddingMatrix, init_random
from mcm.models import BaselineConfig, McM, McMConfig, build_model
from mcm.rng import Rng
from mcm.tensor import NonFiniteError
from mcm.training import (
    Cell,
    EmbeddingSource,
    NonFiniteLossError,
    TrainConfig,
    adaptation_matrix,
    evaluate,
    experiment_matrix,
    full_matrix,
    grid_search,
    honest_split,
    make_embedding,
    render_table,
    train,
    write_results_csv,
)

from .conftest import learnable_examples
from .test_models import MINI

SMALL_BASELINE = dict(filters=8, hidden=8, lstm_units=8, attention_dim=8)


def splits(n=90, seed=1, noise=0.0):
    train_s, test_s = stratified_split(learnable_examples(n, seed, noise), 0.2, Rng(seed))
    return train_s, test_s


def small_mcm(train_s, seed=0, lr_dropout=0.0, trainable=True):
    vocab = build_vocab(train_s, 1)
    rng = Rng(seed)
    return McM(McMConfig(**{**MINI, "dropout": lr_dropout}), init_random(vocab, 8, rng, trainable=trainable), vocab, rng)


def test_frozen_model_stops_after_patience():
    train_s, test_s = splits()
    model = small_mcm(train_s)
    _, log = train(model, train_s, test_s, TrainConfig(epochs=20, lr=0.0, patience=1, batch_size=16))
    assert len(log.records) == 2
    assert log.stop_reason == "early-stopped at epoch 2"
    assert log.best_epoch == 1


def test_untrained_model_predicts_class_zero():
    train_s, test_s = splits()
    model = small_mcm(train_s)
    m = evaluate(model, test_s)
    assert m.confusion[0][0] == test_s.class_counts["negative"]
    assert m.accuracy == pytest.approx(test_s.class_counts["negative"] / len(test_s))


def test_training_learns_and_log_is_consistent():
    train_s, test_s = splits()
    model = small_mcm(train_s)
    ckpt, log = train(model, train_s, test_s, TrainConfig(epochs=25, lr=0.01, patience=25, batch_size=16))
    accs = [r.metrics.accuracy for r in log.records]
    assert log.best.metrics.accuracy == max(accs)
    assert accs.index(max(accs)) + 1 == log.best_epoch == ckpt.epoch
    assert log.records[-1].train_loss < log.records[0].train_loss
    assert max(accs) > 0.6
    assert evaluate(ckpt, test_s).accuracy == pytest.approx(max(accs))


def test_training_is_deterministic():
    train_s, test_s = splits()
    runs = []
    for _ in range(2):
        model = small_mcm(train_s, lr_dropout=0.5)
        ckpt, log = train(model, train_s, test_s, TrainConfig(epochs=4, lr=0.01, batch_size=16, seed=3))
        runs.append((ckpt.to_bytes(), log.to_json()))
    assert runs[0] == runs[1]


def test_evaluate_twice_identical():
    train_s, test_s = splits()
    model = small_mcm(train_s)
    assert evaluate(model, test_s) == evaluate(model, test_s)


def test_evaluate_dimension_mismatch():
    train_s, test_s = splits()
    model = small_mcm(train_s)
    model.vocab = build_vocab(DatasetSplit(learnable_examples(30, seed=9)), 1)
    model.vocab.add("extra-token")
    with pytest.raises(ValueError, match="rows"):
        evaluate(model, test_s)


def test_frozen_embedding_bit_identical_after_epoch():
    train_s, test_s = splits()
    model = small_mcm(train_s, trainable=False)
    before = model.embedding.weight.data.tobytes()
    train(model, train_s, test_s, TrainConfig(epochs=1, lr=0.01, batch_size=16))
    assert model.embedding.weight.data.tobytes() == before


def test_nonfinite_loss_names_batch(monkeypatch):
    train_s, test_s = splits()
    model = small_mcm(train_s)
    calls = {"n": 0}
    real = model.loss

    def flaky(out, labels):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NonFiniteError("log produced inf")
        return real(out, labels)

    monkeypatch.setattr(model, "loss", flaky)
    with pytest.raises(NonFiniteLossError, match="batch 2") as err:
        train(model, train_s, test_s, TrainConfig(epochs=1, batch_size=16))
    assert err.value.batch_index == 2


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)


def test_honest_split_is_stratified():
    train_s, _ = splits(150)
    fit, val = honest_split(train_s)
    assert val.role == "validation"
    for lab, n in train_s.class_counts.items():
        assert abs(val.class_counts[lab] - 0.2 * n) < 1
    assert len(fit) + len(val) == len(train_s)


# embeddings ----------------------------------------------------------------------------


def test_make_embedding_kinds():
    train_s, _ = splits()
    vocab = build_vocab(train_s, 1)
    src = EmbeddingSource(dim=6, skipgram_iterations=200)
    corpus = [ex.tokens for ex in train_s]
    r = make_embedding("random", vocab, False, Rng(0), src)
    p = make_embedding("pretrained", vocab, True, Rng(0), src)
    m = make_embedding("multilingual", vocab, False, Rng(0), src, corpus)
    assert (r.provenance, r.trainable) == ("random", False)
    assert (p.provenance, p.trainable) == ("char-hash", True)
    assert (m.provenance, m.dim) == ("multilingual", 6)
    with pytest.raises(ValueError, match="valid kinds"):
        make_embedding("glove", vocab, False, Rng(0), src)


# grid search ---------------------------------------------------------------------------


GRID_CFG = TrainConfig(epochs=12, batch_size=16, patience=12)
GRID_MODEL = McMConfig(**MINI, dropout=0.0)


def test_grid_single_cell():
    train_s, _ = splits(120)
    res = grid_search(train_s, {"lr": [0.01]}, GRID_CFG, GRID_MODEL, EmbeddingSource(dim=8), min_freq=1)
    assert res.best == {"lr": 0.01} and len(res.cells) == 1
    for lab, n in train_s.class_counts.items():
        assert abs(res.validation.class_counts[lab] - 0.2 * n) < 1


def test_grid_nonzero_lr_beats_frozen():
    train_s, _ = splits(120)
    res = grid_search(train_s, {"lr": [0.0, 0.02]}, GRID_CFG, GRID_MODEL, EmbeddingSource(dim=8), min_freq=1)
    assert res.best == {"lr": 0.02}
    scores = dict((c["lr"], s) for c, s in res.cells)
    assert scores[0.02] > scores[0.0]


def test_grid_rejects_empty():
    train_s, _ = splits()
    with pytest.raises(ValueError, match="nonempty grid"):
        grid_search(train_s, {})
    with pytest.raises(ValueError, match="nonempty grid"):
        grid_search(train_s, {"lr": []})


# experiment matrix ----------------------------------------------------------------------


def test_matrix_presets():
    cells = adaptation_matrix()
    assert len(cells) == 14
    assert len({c.cell_id for c in cells}) == 14
    assert sum(c.model == "embedding_probe" for c in cells) == 2
    mcm_rows = [c for c in full_matrix() if c.model == "mcm"]
    assert len(mcm_rows) == 6


def _overrides():
    base = {k: dict(SMALL_BASELINE) for k in ("convnet", "attention_lstm", "simpleconv", "embedding_probe")}
    return {**base, "mcm": {**MINI}}


def test_matrix_runs_and_renders(tmp_path):
    train_s, test_s = splits()
    cells = [Cell("simpleconv", "random", False), Cell("embedding_probe", "pretrained", True), Cell("mcm", "random", True)]
    cfg = TrainConfig(epochs=2, batch_size=16)
    results = experiment_matrix(cells, train_s, test_s, cfg, _overrides(), EmbeddingSource(dim=8), min_freq=1)
    assert [r.cell for r in results] == cells and all(r.ok for r in results)
    write_results_csv(tmp_path / "r.csv", results)
    rows = list(csv.DictReader((tmp_path / "r.csv").open()))
    assert len(rows) == 3
    assert list(rows[0]) == ["model", "embedding", "finetune", "accuracy", "precision", "recall", "f1", "best_epoch", "wall_seconds"]
    table = render_table(results)
    assert "Without finetuning" in table and "SimpleConv" in table and "McM" in table


def test_matrix_records_failures_and_continues():
    train_s, test_s = splits()
    cells = [Cell("simpleconv", "random", False), Cell("simpleconv", "multilingual", False)]
    src = EmbeddingSource(dim=8, multilingual_path="/nonexistent/vecs.txt")
    results = experiment_matrix(cells, train_s, test_s, TrainConfig(epochs=1, batch_size=16), _overrides(), src, min_freq=1)
    assert results[0].ok and not results[1].ok
    assert "failed" in render_table(results)


def test_matrix_skips_done_cells_and_is_order_independent():
    train_s, test_s = splits()
    a, b = Cell("simpleconv", "random", False), Cell("embedding_probe", "pretrained", False)
    cfg = TrainConfig(epochs=2, batch_size=16)
    kw = dict(model_overrides=_overrides(), source=EmbeddingSource(dim=8), min_freq=1)
    both = experiment_matrix([a, b], train_s, test_s, cfg, **kw)
    only_b = experiment_matrix([b], train_s, test_s, cfg, **kw)
    assert only_b[0].metrics == both[1].metrics
    seen = []
    resumed = experiment_matrix([a, b], train_s, test_s, cfg, done={a.cell_id: both[0]}, on_result=seen.append, **kw)
    assert [r.cell for r in seen] == [b]
    assert resumed[0] is both[0]
