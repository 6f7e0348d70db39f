"""Confusion matrix and accuracy / precision / recall / F1.

Rows of the confusion matrix are true classes, columns are predictions.
"""

import json
import string
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

NUM_CLASSES = 26
LETTERS = string.ascii_lowercase


def confusion_matrix(truths, predictions, num_classes=NUM_CLASSES):
    truths = np.asarray(truths)
    predictions = np.asarray(predictions)
    if truths.shape != predictions.shape or truths.ndim != 1:
        raise DataError(f"truths {truths.shape} and predictions {predictions.shape} differ in length")
    if truths.size == 0:
        raise DataError("cannot build a confusion matrix from zero samples")
    for name, arr in (("truth", truths), ("prediction", predictions)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DataError(f"{name} class out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truths.astype(np.intp), predictions.astype(np.intp)), 1)
    return counts


def _ratio(num, den):
    return num / den if den else 0.0


@dataclass
class ClassScore:
    label: int
    precision: float
    recall: float
    f1: float
    support: int
    tp: int
    fp: int
    fn: int
    flagged: bool  # some ratio had a zero denominator and was scored 0


@dataclass
class EvalReport:
    confusion: np.ndarray
    per_class: list
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    total: int
    correct: int
    average: str = "macro"
    notes: list = field(default_factory=list)

    @property
    def precision(self):
        return self.weighted_precision if self.average == "weighted" else self.macro_precision

    @property
    def recall(self):
        return self.weighted_recall if self.average == "weighted" else self.macro_recall

    @property
    def f1(self):
        return self.weighted_f1 if self.average == "weighted" else self.macro_f1

    def to_dict(self):
        def name(c):
            return LETTERS[c] if len(self.confusion) == NUM_CLASSES else str(c)

        return {
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "average": self.average,
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
            "micro": {"precision": self.micro_precision, "recall": self.micro_recall, "f1": self.micro_f1},
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "per_class": [
                {
                    "class": name(s.label),
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                    "flagged": s.flagged,
                }
                for s in self.per_class
            ],
            "confusion": self.confusion.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def table(self):
        """Human-readable summary with percentages to two decimals."""
        lines = [f"{'class':>5} {'precision':>10} {'recall':>8} {'f1':>8} {'support':>8}"]
        letters = len(self.confusion) == NUM_CLASSES
        for s in self.per_class:
            tag = LETTERS[s.label] if letters else str(s.label)
            flag = " *" if s.flagged else ""
            lines.append(
                f"{tag:>5} {100 * s.precision:10.2f} {100 * s.recall:8.2f} {100 * s.f1:8.2f} {s.support:8d}{flag}"
            )
        lines.append(f"accuracy  {100 * self.accuracy:.2f}%  ({self.correct}/{self.total})")
        lines.append(
            f"{self.average} precision {100 * self.precision:.2f}%  recall {100 * self.recall:.2f}%"
            f"  f1 {100 * self.f1:.2f}%"
        )
        return "\n".join(lines)


def report(confusion, average="macro"):
    """Score a confusion matrix.

    Macro and weighted averages run over the classes that occur in the truth
    (row sums > 0). A class whose precision or recall has a zero denominator
    scores 0 for that ratio and is flagged.
    """
    if average not in ("macro", "weighted"):
        raise ValueError(f"average must be 'macro' or 'weighted', got {average!r}")
    counts = np.asarray(confusion)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise DataError(f"confusion matrix must be square, got {counts.shape}")
    if (counts < 0).any():
        raise DataError("confusion counts must be non-negative")
    counts = counts.astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        raise DataError("confusion matrix is all zeros")

    per_class = []
    present = []
    for c in range(counts.shape[0]):
        tp = int(counts[c, c])
        fp = int(counts[:, c].sum()) - tp
        fn = int(counts[c, :].sum()) - tp
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        f1 = _ratio(2 * p * r, p + r)
        flagged = (tp + fp) == 0 or (tp + fn) == 0
        per_class.append(ClassScore(c, p, r, f1, tp + fn, tp, fp, fn, flagged))
        if tp + fn > 0:
            present.append(per_class[-1])

    weights = np.array([s.support for s in present], dtype=np.float64)
    weights /= weights.sum()

    def macro(attr):
        return float(np.mean([getattr(s, attr) for s in present]))

    def weighted(attr):
        return float(np.dot(weights, [getattr(s, attr) for s in present]))

    correct = int(np.trace(counts))
    tp_sum = sum(s.tp for s in per_class)
    fp_sum = sum(s.fp for s in per_class)
    fn_sum = sum(s.fn for s in per_class)
    micro_p = _ratio(tp_sum, tp_sum + fp_sum)
    micro_r = _ratio(tp_sum, tp_sum + fn_sum)
    notes = [f"class {s.label}: zero denominator scored as 0" for s in per_class if s.flagged and s.support]
    return EvalReport(
        confusion=counts,
        per_class=per_class,
        accuracy=correct / total,
        macro_precision=macro("precision"),
        macro_recall=macro("recall"),
        macro_f1=macro("f1"),
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=_ratio(2 * micro_p * micro_r, micro_p + micro_r),
        weighted_precision=weighted("precision"),
        weighted_recall=weighted("recall"),
        weighted_f1=weighted("f1"),
        total=total,
        correct=correct,
        average=average,
        notes=notes,
    )


def evaluate_predictions(truths, predictions, num_classes=NUM_CLASSES, average="macro"):
    return report(confusion_matrix(truths, predictions, num_classes), average=average)
