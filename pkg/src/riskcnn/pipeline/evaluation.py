"""Test-split metrics: mean squared error and the critical/uncritical confusion matrix."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..rmc import DEFAULT_THRESHOLD_HEADWAY, critical_value_threshold
from ..nn import Architecture, predict_batch


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class EvalReport:
    mse: float | None
    confusion: Confusion
    accuracy: float
    fp_rate: float
    fn_rate: float
    threshold_headway: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        return d


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def report_from_confusion(c: Confusion, mse: float | None = None, threshold_headway: float = DEFAULT_THRESHOLD_HEADWAY) -> EvalReport:
    """Accuracy, false-positive rate (FP / actual uncritical) and false-negative rate (FN / actual critical)."""
    if c.total == 0:
        raise ValueError("empty confusion matrix")
    return EvalReport(
        mse=mse,
        confusion=c,
        accuracy=(c.tp + c.tn) / c.total,
        fp_rate=_ratio(c.fp, c.fp + c.tn),
        fn_rate=_ratio(c.fn, c.fn + c.tp),
        threshold_headway=threshold_headway,
    )


def confusion_matrix(pred: np.ndarray, labels: np.ndarray, threshold_headway: float = DEFAULT_THRESHOLD_HEADWAY) -> Confusion:
    """Critical is the positive class; predictions are clamped to [0, 1] first."""
    thr = critical_value_threshold(threshold_headway)
    p = np.clip(np.asarray(pred, dtype=np.float64), 0.0, 1.0) >= thr
    t = np.asarray(labels, dtype=np.float64) >= thr
    return Confusion(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
        tn=int(np.sum(~p & ~t)),
    )


def evaluate_predictions(pred: np.ndarray, labels: np.ndarray, threshold_headway: float = DEFAULT_THRESHOLD_HEADWAY) -> EvalReport:
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if pred.shape != labels.shape:
        raise ValueError(f"{pred.shape[0]} predictions for {labels.shape[0]} labels")
    if pred.size == 0:
        raise ValueError("cannot evaluate an empty split")
    mse = float(np.mean((pred - labels) ** 2))
    return report_from_confusion(confusion_matrix(pred, labels, threshold_headway), mse, threshold_headway)


def evaluate(params, x: np.ndarray, labels: np.ndarray, arch: Architecture, threshold_headway: float = DEFAULT_THRESHOLD_HEADWAY) -> EvalReport:
    """MSE uses the raw network output; classification uses the clamped one."""
    return evaluate_predictions(predict_batch(params, x, arch), labels, threshold_headway)
