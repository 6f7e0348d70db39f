import io

import numpy as np
import pytest

from glyphforge.errors import DataError, NumericError, ShapeError
from glyphforge.model import ModelConfig, build_model
from glyphforge.optim import softmax_cross_entropy
from glyphforge.trainer import (
    EpochLog,
    Trainer,
    emit_loss_curve,
    evaluate,
    loss_and_accuracy,
    read_loss_curve,
    train,
)


def cfg(**kw):
    base = dict(name="toy", input_size=16, conv_filters=[4, 4], hidden_neurons=[16], epochs=3, batch_size=8, lr=0.01, seed=5)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def bars(rng):
    """Four easy classes: a dark bar at a class-specific row."""
    n = 48
    y = np.arange(n) % 4
    X = np.ones((n, 16, 16, 1), np.float32)
    for i, label in enumerate(y):
        X[i, 2 + 3 * label : 4 + 3 * label, 2:14] = 0.0
    X += rng.normal(0, 0.05, X.shape).astype(np.float32)
    X = np.clip(X, 0, 1)
    return (X[:32], y[:32]), (X[32:], y[32:])


def test_loss_decreases(bars):
    tr, va = bars
    c = cfg(epochs=8)
    initial = softmax_cross_entropy(build_model(c).logits(tr[0]), tr[1]).loss
    art, logs = train(c, tr, va, out=None)
    assert [e.epoch for e in logs] == list(range(1, 9))
    assert logs[-1].train_loss < initial
    assert loss_and_accuracy(art.to_model(), *tr)[0] < initial


def test_training_is_deterministic(bars):
    tr, va = bars
    a, la = train(cfg(dropout_rate=0.3), tr, va, out=None)
    b, lb = train(cfg(dropout_rate=0.3), tr, va, out=None)
    assert a.to_bytes() == b.to_bytes()
    assert la == lb
    c, _ = train(cfg(dropout_rate=0.3, seed=6), tr, va, out=None)
    assert c.to_bytes() != a.to_bytes()


def test_zero_learning_rate_keeps_params(bars):
    tr, va = bars
    c = cfg(lr=0.0, epochs=2)
    art, _ = train(c, tr, va, out=None)
    init = build_model(c)
    assert all(np.array_equal(p, q) for p, q in zip(art.params, init.params))


def test_best_checkpoint_is_max_accuracy(bars):
    tr, va = bars
    t = Trainer(cfg(epochs=6, lr=0.02), tr, va)
    for _ in range(6):
        t.run_epoch()
    best_acc = max(e.val_accuracy for e in t.logs)
    first = next(e for e in t.logs if e.val_accuracy == best_acc)
    ties = [e for e in t.logs if e.val_accuracy == best_acc]
    expected = min(ties, key=lambda e: (e.val_loss, e.epoch))
    assert t.best.epoch == expected.epoch and t.best.val_accuracy == best_acc
    assert first.val_accuracy == t.best.val_accuracy
    rep = evaluate(t.artifact(), *va)
    assert rep.accuracy == pytest.approx(best_acc)


def test_evaluate_does_not_mutate(bars):
    tr, va = bars
    model = build_model(cfg())
    before = [p.copy() for p in model.params]
    evaluate(model, *va)
    assert all(np.array_equal(p, q) for p, q in zip(before, model.params))


def test_progress_lines(bars):
    tr, va = bars
    buf = io.StringIO()
    train(cfg(epochs=2), tr, va, out=buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 2 and lines[0].startswith("epoch=1 train_loss=") and "val_acc=" in lines[0]


def test_nan_input_aborts(bars):
    (X, y), va = bars
    X = X.copy()
    X[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError, match="epoch 1, batch"):
        train(cfg(), (X, y), va, out=None)


def test_bad_sets(bars):
    tr, va = bars
    with pytest.raises(DataError):
        train(cfg(), (tr[0][:0], tr[1][:0]), va, out=None)
    with pytest.raises(DataError):
        train(cfg(), (tr[0], tr[1][:3]), va, out=None)
    with pytest.raises(ShapeError):
        train(cfg(input_size=20), tr, va, out=None)
    with pytest.raises(ShapeError):
        evaluate(build_model(cfg(input_size=20)), *va)


def test_loss_curve_csv(tmp_path):
    logs = [EpochLog(2, 0.5, 0.6, 0.75), EpochLog(1, 1.0 / 3, 2.0, 0.5)]
    path = tmp_path / "loss.csv"
    emit_loss_curve(logs, path)
    text = path.read_text()
    assert text.splitlines() == [
        "epoch,train_loss,val_loss,val_accuracy",
        "1,0.333333,2.000000,0.500000",
        "2,0.500000,0.600000,0.750000",
    ]
    back = read_loss_curve(path)
    assert [e.epoch for e in back] == [1, 2] and back[1] == logs[0]
    with pytest.raises(ValueError):
        emit_loss_curve([], path)
