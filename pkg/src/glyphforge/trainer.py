"""Mini-batch training with validation, best-checkpoint selection and loss curves."""

import csv
import sys
from dataclasses import dataclass

import numpy as np

from .dataset import as_float
from .errors import DataError, NumericError, ShapeError
from .metrics import evaluate_predictions
from .model import ModelArtifact, build_model
from .optim import AdamState, adam_step, softmax_cross_entropy


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class BestRecord:
    epoch: int
    val_accuracy: float
    val_loss: float
    params: list


def _check_set(name, data, input_shape):
    X, y = data
    if len(X) == 0:
        raise DataError(f"{name} split is empty")
    if len(X) != len(y):
        raise DataError(f"{name} split: {len(X)} images but {len(y)} labels")
    if tuple(X.shape[1:]) != tuple(input_shape):
        raise ShapeError(f"{name} split: images are {X.shape[1:]}, model expects {input_shape}")


def predict_logits(model, X, batch_size=64):
    """Eval-mode logits for ``X`` (uint8 or float), computed in chunks."""
    out = [model.logits(as_float(X[s : s + batch_size])) for s in range(0, len(X), batch_size)]
    return np.concatenate(out, axis=0)


def loss_and_accuracy(model, X, y, batch_size=64):
    logits = predict_logits(model, X, batch_size)
    loss = softmax_cross_entropy(logits, y).loss
    acc = float(np.mean(logits.argmax(axis=1) == y))
    return loss, acc


class Trainer:
    """Owns one model, its Adam state and the best checkpoint seen so far."""

    def __init__(self, cfg, train_set, val_set, out=None):
        cfg.validate()
        self.cfg = cfg
        self.model = build_model(cfg)
        self.model.set_dropout_rng(np.random.default_rng([cfg.seed, 2]))
        _check_set("train", train_set, self.model.input_shape)
        _check_set("val", val_set, self.model.input_shape)
        self.train_set = train_set
        self.val_set = val_set
        self.adam = AdamState.for_params(
            self.model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps
        )
        self.epoch = 0
        self.best = None
        self.logs = []
        self.out = out

    def _snapshot(self):
        return [p.copy() for p in self.model.params]

    def run_epoch(self):
        """One pass over the shuffled training split, then validation."""
        self.epoch += 1
        X, y = self.train_set
        n = len(X)
        order = np.random.default_rng([self.cfg.seed, self.epoch]).permutation(n)
        bs = self.cfg.batch_size
        total = 0.0
        for b, start in enumerate(range(0, n, bs), start=1):
            idx = order[start : start + bs]
            logits = self.model.forward(as_float(X[idx]), training=True)
            lv = softmax_cross_entropy(logits, y[idx])
            if not np.isfinite(lv.loss) or not np.isfinite(logits).all():
                raise NumericError(f"non-finite loss at epoch {self.epoch}, batch {b}")
            grads = self.model.backward(lv.grad)
            try:
                adam_step(self.model.params, grads, self.adam)
            except NumericError as exc:
                raise NumericError(f"epoch {self.epoch}, batch {b}: {exc}") from exc
            total += lv.loss * len(idx)
        self.model.clear_cache()
        val_loss, val_acc = loss_and_accuracy(self.model, *self.val_set)
        entry = EpochLog(self.epoch, total / n, val_loss, val_acc)
        self.logs.append(entry)
        if self._improves(val_acc, val_loss):
            self.best = BestRecord(self.epoch, val_acc, val_loss, self._snapshot())
        if self.out is not None:
            print(
                f"epoch={entry.epoch} train_loss={entry.train_loss:.6f} "
                f"val_loss={entry.val_loss:.6f} val_acc={entry.val_accuracy:.6f}",
                file=self.out,
                flush=True,
            )
        return entry

    def _improves(self, acc, loss):
        # higher accuracy wins; on a tie the lower loss; on a full tie the earlier epoch
        if self.best is None:
            return True
        return acc > self.best.val_accuracy or (acc == self.best.val_accuracy and loss < self.best.val_loss)

    def artifact(self):
        params = self.best.params if self.best is not None else self._snapshot()
        return ModelArtifact(config=self.cfg, params=[p.astype(np.float32, copy=True) for p in params])


def train(cfg, train_set, val_set, out=sys.stdout):
    """Train for ``cfg.epochs`` epochs; return ``(best artifact, epoch logs)``."""
    trainer = Trainer(cfg, train_set, val_set, out=out)
    for _ in range(cfg.epochs):
        trainer.run_epoch()
    return trainer.artifact(), trainer.logs


def evaluate(model_or_artifact, X, y, average="macro", batch_size=64):
    """Eval-mode predictions (argmax, ties to the lowest class) scored into an EvalReport."""
    model = model_or_artifact
    if isinstance(model_or_artifact, ModelArtifact):
        model = model_or_artifact.to_model()
    if len(X) == 0:
        raise DataError("cannot evaluate an empty split")
    if tuple(X.shape[1:]) != model.input_shape:
        raise ShapeError(f"images are {X.shape[1:]}, model expects {model.input_shape}")
    preds = predict_logits(model, X, batch_size).argmax(axis=1)
    return evaluate_predictions(y, preds, average=average)


LOSS_HEADER = ["epoch", "train_loss", "val_loss", "val_accuracy"]


def emit_loss_curve(logs, path):
    if not logs:
        raise ValueError("no epoch logs to write")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_HEADER)
        for e in sorted(logs, key=lambda e: e.epoch):
            writer.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.val_loss:.6f}", f"{e.val_accuracy:.6f}"])


def read_loss_curve(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            EpochLog(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["val_accuracy"]))
            for r in reader
        ]
