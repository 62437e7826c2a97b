"""Classification metrics mirroring the evaluation tables (accuracy, P/R/F1, AUC, timings)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..schema import N_CLASSES, ClassLabel
from .modelio import serialize_model


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den > 0 else 0.0


@dataclass
class PerClass:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray


def per_class_scores(cm: np.ndarray) -> PerClass:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    prec = np.array([_ratio(t, p) for t, p in zip(tp, pred_tot)])
    rec = np.array([_ratio(t, s) for t, s in zip(tp, true_tot)])
    f1 = np.array([_ratio(2 * p * r, p + r) for p, r in zip(prec, rec)])
    return PerClass(prec, rec, f1, true_tot.astype(np.int64))


def summarize_confusion(cm: np.ndarray) -> dict[str, float]:
    """Accuracy plus macro and support-weighted precision/recall/F1.

    Macro averages run over classes that occur in either the truth or the
    predictions; a class with no support and no predictions carries no signal.
    """
    cm = np.asarray(cm)
    total = cm.sum()
    pc = per_class_scores(cm)
    active = (cm.sum(axis=0) + cm.sum(axis=1)) > 0
    if not active.any():
        active = np.ones(len(cm), dtype=bool)
    w = pc.support / pc.support.sum() if pc.support.sum() else np.zeros(len(cm))
    return {
        "accuracy": _ratio(np.trace(cm), total),
        "precision_macro": float(pc.precision[active].mean()),
        "recall_macro": float(pc.recall[active].mean()),
        "f1_macro": float(pc.f1[active].mean()),
        "precision_weighted": float(np.dot(w, pc.precision)),
        "recall_weighted": float(np.dot(w, pc.recall)),
        "f1_weighted": float(np.dot(w, pc.f1)),
    }


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    # Tied scores share the mean of their 1-based positions.
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(xs)]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def auc_one_vs_rest(y_true, scores, positive: int) -> float | None:
    """Mann-Whitney AUC of `scores` for class `positive`; None if undefined."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    pos = y_true == positive
    n_pos = int(pos.sum())
    n_neg = len(y_true) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    auc: dict[ClassLabel, float | None]
    confusion: np.ndarray
    train_time: float | None = None
    test_time: float | None = None
    prediction_time_per_packet: float | None = None
    model_size: int | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "precision_weighted": self.precision_weighted,
            "recall_weighted": self.recall_weighted,
            "f1_weighted": self.f1_weighted,
            "auc": {lab.dataset_name: v for lab, v in self.auc.items()},
            "confusion": self.confusion.tolist(),
            "train_time": self.train_time,
            "test_time": self.test_time,
            "prediction_time_per_packet": self.prediction_time_per_packet,
            "model_size": self.model_size,
        }


def evaluate(model, X, y, *, timing_sample: int = 200, train_time: float | None = None) -> Metrics:
    """Score `model` on an encoded test set.

    Per-packet prediction time is the mean wall time of single-row calls over up
    to `timing_sample` rows, the way the gateway invokes the model.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("test set is empty")
    t0 = time.perf_counter()
    proba = model.predict_proba(X)
    test_time = time.perf_counter() - t0
    pred = np.argmax(proba, axis=1)
    cm = confusion_matrix(y, pred)
    s = summarize_confusion(cm)
    auc = {lab: auc_one_vs_rest(y, proba[:, int(lab)], int(lab)) for lab in ClassLabel}
    k = min(timing_sample, len(y))
    t0 = time.perf_counter()
    for i in range(k):
        model.predict_proba(X[i : i + 1])
    per_packet = (time.perf_counter() - t0) / k
    return Metrics(
        accuracy=s["accuracy"],
        precision=s["precision_macro"],
        recall=s["recall_macro"],
        f1=s["f1_macro"],
        precision_weighted=s["precision_weighted"],
        recall_weighted=s["recall_weighted"],
        f1_weighted=s["f1_weighted"],
        auc=auc,
        confusion=cm,
        train_time=train_time,
        test_time=test_time,
        prediction_time_per_packet=per_packet,
        model_size=len(serialize_model(model)),
    )
