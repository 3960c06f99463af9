"""Classification metrics and their diffable text report."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    micro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    loss_curve: list = field(default_factory=list)


def confusion_matrix(labels, predictions, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise ContractError("labels and predictions must be equal-length vectors")
    if labels.size == 0:
        raise ContractError("cannot score an empty prediction set")
    for arr in (labels, predictions):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ContractError("class index outside [0, n_classes)")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def compute_metrics(labels, predictions, n_classes, loss_curve=None):
    """Accuracy, per-class precision/recall, macro and micro F1.

    Empty denominators score zero (a class never predicted has precision 0,
    a class never present has recall 0); micro F1 equals accuracy for
    single-label classification.
    """
    cm = confusion_matrix(labels, predictions, n_classes)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros(n_classes), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros(n_classes), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    total = float(cm.sum())
    micro_tp = float(tp.sum())
    # predicted and actual totals both equal the sample count here
    micro_f1 = 2 * micro_tp / (total + total) if total else 0.0
    return Metrics(
        accuracy=micro_tp / total,
        macro_f1=float(f1.mean()),
        micro_f1=micro_f1,
        precision=precision,
        recall=recall,
        loss_curve=list(loss_curve) if loss_curve is not None else [],
    )


def format_report(metrics):
    """Stable key=value lines; repr floats so reruns diff byte-for-byte."""
    lines = [
        f"accuracy={metrics.accuracy!r}",
        f"macro_f1={metrics.macro_f1!r}",
        f"micro_f1={metrics.micro_f1!r}",
    ]
    for i, (p, r) in enumerate(zip(metrics.precision, metrics.recall)):
        lines.append(f"precision_class_{i}={float(p)!r}")
        lines.append(f"recall_class_{i}={float(r)!r}")
    if metrics.loss_curve:
        lines.append("loss_curve=" + ",".join(repr(float(v)) for v in metrics.loss_curve))
    return "\n".join(lines) + "\n"
