"""Prediction and evaluation for the classifier heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import N_CLASSES, softmax


def predict(model, x: np.ndarray) -> np.ndarray:
    """Class probabilities in inference mode.

    Accepts a single embedding (1-D) or a batch (2-D) and returns
    probabilities of matching rank.  Rows sum to 1; argmax ties resolve to
    the lowest class index downstream because that is numpy's convention.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected 1-D or 2-D input, got shape {x.shape}")
    if x.shape[1] != model.in_dim:
        raise ValueError(
            f"embedding dim {x.shape[1]} does not match model dim {model.in_dim}"
        )
    probs = softmax(model.forward_eval(x))
    return probs[0] if single else probs


def predict_labels(model, x: np.ndarray) -> np.ndarray:
    probs = predict(model, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return np.argmax(probs, axis=1).astype(np.int64)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray          # rows = true class, cols = predicted
    confusion_normalized: np.ndarray
    per_class_precision: tuple[float, ...]
    per_class_recall: tuple[float, ...]
    per_class_f1: tuple[float, ...]
    n_samples: int

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "confusion_normalized": self.confusion_normalized.tolist(),
            "per_class_precision": list(self.per_class_precision),
            "per_class_recall": list(self.per_class_recall),
            "per_class_f1": list(self.per_class_f1),
            "n_samples": self.n_samples,
        }


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray,
                     n_classes: int = N_CLASSES) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("label arrays must be 1-D and the same length")
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (y_true, y_pred), 1)
    return mat


def report_from_confusion(mat: np.ndarray) -> EvalReport:
    """Derive all summary metrics from a confusion matrix.

    Undefined ratios (empty class, empty prediction column) become 0, the
    usual zero-division convention, so a degenerate classifier still gets
    a well-defined macro-F1.
    """
    mat = np.asarray(mat, dtype=np.int64)
    n = int(mat.sum())
    tp = np.diag(mat).astype(np.float64)
    true_tot = mat.sum(axis=1).astype(np.float64)
    pred_tot = mat.sum(axis=0).astype(np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        recall = np.where(true_tot > 0, tp / true_tot, 0.0)
        denom = 2 * tp + (pred_tot - tp) + (true_tot - tp)
        f1 = np.where(denom > 0, 2 * tp / denom, 0.0)
        norm = np.where(true_tot[:, None] > 0, mat / true_tot[:, None], 0.0)

    return EvalReport(
        accuracy=float(tp.sum() / n) if n else 0.0,
        macro_f1=float(f1.mean()),
        confusion=mat,
        confusion_normalized=norm,
        per_class_precision=tuple(float(v) for v in precision),
        per_class_recall=tuple(float(v) for v in recall),
        per_class_f1=tuple(float(v) for v in f1),
        n_samples=n,
    )


def evaluate(model, x: np.ndarray, y: np.ndarray) -> EvalReport:
    """Accuracy, macro-F1 and confusion matrices on a labelled set."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty set")
    preds = predict_labels(model, x)
    return report_from_confusion(confusion_matrix(y, preds, model.out_dim))
