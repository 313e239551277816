"""Imbalance-aware evaluation: accuracy, macro F1, G-Mean, macro one-vs-rest AUC."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, MissingClassError, ReportError

N_CLASSES = 3


def confusion(y_true, y_pred, n_classes=N_CLASSES):
    """Counts[t, p] of samples with true class t predicted as p."""
    y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if y_true.size != y_pred.size:
        raise DimensionError(f"{y_true.size} true labels vs {y_pred.size} predictions")
    if y_true.size == 0:
        raise DataError("confusion matrix of zero samples")
    for arr in (y_true, y_pred):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise DataError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm):
    cm = np.asarray(cm)
    return float(np.trace(cm) / cm.sum())


def recalls(cm):
    """Per-class recall; NaN where the class never occurs."""
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.diag(cm) / support


def precisions(cm):
    """Per-class precision; 0 where the class is never predicted."""
    cm = np.asarray(cm, dtype=np.float64)
    predicted = cm.sum(axis=0)
    return np.divide(np.diag(cm), predicted, out=np.zeros(len(cm)), where=predicted > 0)


def macro_f1(cm):
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    # 2PR/(P+R) == 2TP / (2TP + FP + FN); defined as 0 when the denominator is 0
    denom = 2 * tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    f1 = np.divide(2 * tp, denom, out=np.zeros(len(cm)), where=denom > 0)
    return float(f1.mean())


def gmean(cm):
    """Geometric mean of per-class recalls over all classes."""
    r = recalls(cm)
    absent = np.flatnonzero(np.isnan(r))
    if absent.size:
        raise MissingClassError(f"G-Mean undefined: class {int(absent[0])} has no true samples", int(absent[0]))
    return float(np.prod(r) ** (1.0 / len(r)))


def binary_auc(scores, positive):
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    pos, neg = scores[positive], np.sort(scores[~positive])
    if pos.size == 0 or neg.size == 0:
        raise MissingClassError("AUC needs at least one positive and one negative")
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    # integer numerator (doubled) keeps the result exact up to the final divide
    return float((2 * below.sum() + ties.sum()) / (2 * pos.size * neg.size))


def auc_ovr_macro(y_true, probs):
    """Unweighted mean over classes of one-vs-rest AUC on that class's column."""
    y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (y_true.size, N_CLASSES):
        raise DimensionError(f"probs shape {probs.shape}, expected ({y_true.size}, {N_CLASSES})")
    counts = np.bincount(y_true, minlength=N_CLASSES)
    for c in range(N_CLASSES):
        if counts[c] == 0:
            raise MissingClassError(f"AUC undefined: class {c} absent from y_true", c)
    return float(np.mean([binary_auc(probs[:, c], y_true == c) for c in range(N_CLASSES)]))


@dataclass
class MetricsReport:
    auc: float
    gmean: float
    f1: float
    acc: float
    confusion: np.ndarray
    recall: np.ndarray = field(default=None)
    precision: np.ndarray = field(default=None)

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        if self.recall is None:
            self.recall = recalls(self.confusion)
        if self.precision is None:
            self.precision = precisions(self.confusion)
        self.recall = np.asarray(self.recall, dtype=np.float64)
        self.precision = np.asarray(self.precision, dtype=np.float64)

    @property
    def total(self):
        return int(self.confusion.sum())

    def as_dict(self):
        return {
            "auc": self.auc,
            "gmean": self.gmean,
            "f1": self.f1,
            "acc": self.acc,
            "confusion": self.confusion.tolist(),
            "per_class": {
                "recall": [float(x) for x in self.recall],
                "precision": [float(x) for x in self.precision],
            },
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            auc=obj["auc"], gmean=obj["gmean"], f1=obj["f1"], acc=obj["acc"],
            confusion=obj["confusion"],
            recall=obj["per_class"]["recall"],
            precision=obj["per_class"]["precision"],
        )

    def csv_row(self):
        return ",".join(_fmt_float(v) for v in (self.auc, self.gmean, self.f1, self.acc))


CSV_HEADER = "auc,gmean,f1,acc"


def evaluate(y_true, probs):
    """Full report from true labels and (n, 3) class probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    y_pred = np.argmax(probs, axis=1)
    cm = confusion(y_true, y_pred)
    return MetricsReport(
        auc=auc_ovr_macro(y_true, probs),
        gmean=gmean(cm),
        f1=macro_f1(cm),
        acc=accuracy(cm),
        confusion=cm,
    )


def cv_aggregate(reports):
    """Mean of every scalar (and per-class) metric; confusion matrices summed."""
    reports = list(reports)
    if not reports:
        raise DataError("cv_aggregate of zero reports")
    k = len(reports)
    return MetricsReport(
        auc=math.fsum(r.auc for r in reports) / k,
        gmean=math.fsum(r.gmean for r in reports) / k,
        f1=math.fsum(r.f1 for r in reports) / k,
        acc=math.fsum(r.acc for r in reports) / k,
        confusion=sum(r.confusion for r in reports),
        recall=np.mean([r.recall for r in reports], axis=0),
        precision=np.mean([r.precision for r in reports], axis=0),
    )


# ---------------------------------------------------------------------------
# JSON rendering with 17 significant digits


def _fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        raise ReportError(f"non-finite value {x!r} cannot be serialized")
    text = f"{x:.17g}"
    if not any(ch in text for ch in ".e"):
        text += ".0"
    return text


def to_json(obj, indent=2, _level=0):
    """Deterministic JSON text; floats rendered with 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}"{k}": {to_json(v, indent, _level + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    raise ReportError(f"cannot serialize {type(obj).__name__}")


def report_serialize(report):
    return to_json(report.as_dict()) + "\n"


def report_deserialize(text):
    return MetricsReport.from_dict(json.loads(text))
