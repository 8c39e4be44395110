import csv
import struct

import numpy as np
import pytest

from temrnn.gradcheck import numeric_gradient, relative_error
from temrnn.models import ModelConfig, SequenceClassifier
from temrnn.synth import Dataset
from temrnn.train import (DivergenceError, TrainConfig, cross_entropy, kfold, load_checkpoint, lr_at,
                          predict_proba, save_checkpoint, train)


def _feature_data(n=12, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    xs = rng.normal(size=(n, 2, 5, 64)) + labels[:, None, None, None] * 0.5
    d = np.stack([rng.uniform(1, 50, n), np.zeros(n)], axis=1)
    return Dataset(xs, d, labels)


def _model(cell="dlstm", seed=0):
    return SequenceClassifier(ModelConfig.feature(cell, hidden=3), seed=seed)


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at(cfg, 0) == 0.01
    assert lr_at(cfg, 49) == 0.01
    assert lr_at(cfg, 50) == pytest.approx(0.004, rel=1e-15)
    assert lr_at(cfg, 70) == pytest.approx(0.0016, rel=1e-15)
    assert lr_at(cfg, 80) == pytest.approx(0.00064, rel=1e-15)
    values = [lr_at(cfg, e) for e in range(100)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert len(set(values)) == 4
    with pytest.raises(ValueError):
        lr_at(cfg, 100)


def test_train_config_validation():
    for kw in ({"milestones": (50, 50)}, {"milestones": (10, 100)}, {"lr": -1.0}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_cross_entropy_values():
    assert cross_entropy([0.0, 0.0], 1)[0] == pytest.approx(np.log(2), abs=1e-15)
    assert cross_entropy([20.0, -20.0], 0)[0] < 1e-15
    assert np.isfinite(cross_entropy([1e4, -1e4], 1)[0])


def test_cross_entropy_gradient():
    rng = np.random.default_rng(0)
    z, y = rng.normal(size=(6, 2)) * 3, rng.integers(0, 2, 6)
    _, g = cross_entropy(z, y)
    idx = list(np.ndindex(z.shape))
    num = numeric_gradient(lambda: cross_entropy(z, y)[0], z, idx)
    assert relative_error(g.ravel(), num) < 1e-8


def test_zero_lr_leaves_params_unchanged():
    data, model = _feature_data(), _model()
    before = {k: v.copy() for k, v in model.params.items()}
    train(TrainConfig(epochs=3, lr=0.0, milestones=()), data, model)
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_single_sample_overfit():
    data = _feature_data(n=1)
    model = _model("lstm")
    model.config.dropout = 0.0
    state = train(TrainConfig(epochs=200, lr=0.05, milestones=(), batch_size=1), data, model)
    assert state.history[-1]["train_loss"] < 0.01


def test_training_is_deterministic():
    data = _feature_data()
    a = train(TrainConfig(epochs=3, milestones=(), batch_size=4, seed=5), data, _model(seed=1))
    b = train(TrainConfig(epochs=3, milestones=(), batch_size=4, seed=5), data, _model(seed=1))
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)
    assert a.history == b.history


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    data = _feature_data()
    cfg = TrainConfig(epochs=4, milestones=(2,), batch_size=5, seed=3)
    full = train(cfg, data, _model(seed=2))
    half = train(cfg, data, _model(seed=2), stop_epoch=2)
    save_checkpoint(tmp_path / "h.ckpt", half)
    resumed = load_checkpoint(tmp_path / "h.ckpt")
    assert resumed.epoch == 2
    resumed = train(cfg, data, resumed.model, state=resumed)
    for k in full.model.params:
        assert np.array_equal(full.model.params[k], resumed.model.params[k]), k
    assert full.history == resumed.history


def test_checkpoint_layout(tmp_path):
    state = train(TrainConfig(epochs=1, milestones=()), _feature_data(), _model("mccnn"))
    save_checkpoint(tmp_path / "c.ckpt", state, extra={"note": "x"})
    raw = (tmp_path / "c.ckpt").read_bytes()
    assert raw[:4] == b"DLCK"
    version, n = struct.unpack_from("<HI", raw, 4)
    assert version == 1
    pos = 10 + n
    (klen,) = struct.unpack_from("<H", raw, pos)
    name = raw[pos + 2:pos + 2 + klen].decode()
    assert name == sorted(state.model.params)[0]
    loaded = load_checkpoint(tmp_path / "c.ckpt")
    assert loaded.meta["extra"] == {"note": "x"}
    assert loaded.model.config == state.model.config
    save_checkpoint(tmp_path / "d.ckpt", loaded, extra={"note": "x"})
    assert (tmp_path / "d.ckpt").read_bytes() == raw


def test_divergence_is_reported():
    data = _feature_data()
    data.inputs[3, 0, 0, 0] = np.nan
    with pytest.raises(DivergenceError, match="epoch 0"):
        train(TrainConfig(epochs=1, milestones=(), batch_size=4), data, _model("mccnn"))


def test_training_log(tmp_path):
    data = _feature_data()
    train(TrainConfig(epochs=2, milestones=()), data, _model("mccnn"), val=data, log_path=tmp_path / "l.csv",
          header={"cell": "mccnn", "seed": 0})
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[:2] == ["# cell=mccnn", "# seed=0"]
    rows = list(csv.DictReader(lines[2:]))
    assert list(rows[0]) == ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"]
    assert [r["epoch"] for r in rows] == ["0", "1"]


def test_predict_proba_range():
    p = predict_proba(_model(), _feature_data())
    assert p.shape == (12,) and np.all((p > 0) & (p < 1))


def test_kfold_partition():
    folds = kfold(np.arange(10) % 2, k=5, seed=0)
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    with pytest.raises(ValueError):
        kfold(np.zeros(3), k=5)


@pytest.mark.parametrize("seed", range(5))
def test_kfold_stratified_and_seeded(seed):
    labels = np.random.default_rng(seed).integers(0, 2, 103)
    folds = kfold(labels, k=5, seed=seed)
    for f in folds:
        expected = labels.mean() * len(f)
        assert abs(labels[f].sum() - expected) <= 1
    assert all(np.array_equal(a, b) for a, b in zip(folds, kfold(labels, k=5, seed=seed)))
