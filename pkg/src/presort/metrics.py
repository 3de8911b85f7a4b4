"""Confusion/mismatch matrices and the scores derived from them."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .labels import BACKGROUND, LabelSpace


class MetricWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true labels, columns predicted labels."""

    counts: np.ndarray
    label_space: LabelSpace

    def __post_init__(self):
        k = len(self.label_space)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts shape {self.counts.shape} does not match {k} classes")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def recalls(self) -> dict[str, float]:
        support = self.counts.sum(axis=1)
        return {n: (float(self.counts[i, i] / support[i]) if support[i] else float("nan"))
                for i, n in enumerate(self.label_space)}

    def permuted(self, order: Sequence[str]) -> "ConfusionMatrix":
        idx = [self.label_space.index(n) for n in order]
        return ConfusionMatrix(self.counts[np.ix_(idx, idx)], LabelSpace(tuple(order)))

    def to_dict(self) -> dict:
        return {"labels": list(self.label_space), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class MismatchMatrix:
    """Per true class: how many segments a binary model called background (col 0) or primate (col 1)."""

    counts: np.ndarray
    label_space: LabelSpace

    def percentages(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, 100.0 * self.counts / np.maximum(rows, 1), 0.0)

    def to_dict(self) -> dict:
        return {"labels": list(self.label_space), "columns": ["background", "primate"],
                "counts": self.counts.tolist(),
                "percent": np.round(self.percentages(), 6).tolist()}


def confusion(true_labels: Sequence[str], predicted_labels: Sequence[str],
              label_space: LabelSpace) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise ValueError(f"length mismatch: {len(true_labels)} true vs {len(predicted_labels)} predicted")
    t = np.asarray(label_space.indices(true_labels), dtype=np.int64)
    p = np.asarray(label_space.indices(predicted_labels), dtype=np.int64)
    return confusion_from_indices(t, p, label_space)


def confusion_from_indices(t, p, label_space: LabelSpace) -> ConfusionMatrix:
    k = len(label_space)
    t, p = np.asarray(t, dtype=np.int64), np.asarray(p, dtype=np.int64)
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k) if t.size else np.zeros((k, k), np.int64)
    return ConfusionMatrix(counts, label_space)


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / total)


def uar(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class recalls; every class must have support."""
    support = cm.counts.sum(axis=1)
    empty = [n for n, s in zip(cm.label_space, support) if s == 0]
    if empty:
        raise ValueError(f"UAR undefined: class(es) {empty} have no true samples")
    return float(np.mean(np.diag(cm.counts) / support))


def f1_binary(cm: ConfusionMatrix, positive: int = 1) -> float:
    """F1 for the ``positive`` class of a 2x2 matrix; 0.0 with a MetricWarning if undefined."""
    if cm.counts.shape != (2, 2):
        raise ValueError("f1_binary needs a 2x2 confusion matrix")
    tp = cm.counts[positive, positive]
    fp = cm.counts[1 - positive, positive]
    fn = cm.counts[positive, 1 - positive]
    if tp + fp == 0 or tp + fn == 0 or tp == 0:
        warnings.warn("F1 undefined or zero (no positive predictions or support)", MetricWarning,
                      stacklevel=2)
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2 * precision * recall / (precision + recall))


def mismatch(true_multiclass_labels: Sequence[str], binary_predictions: Sequence,
             label_space: LabelSpace | None = None) -> MismatchMatrix:
    """``binary_predictions`` holds 0/1 (or 'background'/'primate') per segment."""
    if len(true_multiclass_labels) != len(binary_predictions):
        raise ValueError("length mismatch")
    space = label_space or LabelSpace.from_labels(true_multiclass_labels)
    t = np.asarray(space.indices(true_multiclass_labels), dtype=np.int64)
    b = np.asarray([0 if (x == 0 or x == BACKGROUND) else 1 for x in binary_predictions], dtype=np.int64)
    counts = np.zeros((len(space), 2), dtype=np.int64)
    np.add.at(counts, (t, b), 1)
    return MismatchMatrix(counts, space)


def summary(cm: ConfusionMatrix) -> dict:
    out = {"accuracy": accuracy(cm), "per_class_recall": cm.recalls(), "n": cm.total}
    try:
        out["uar"] = uar(cm)
    except ValueError:
        out["uar"] = None
    if cm.counts.shape == (2, 2):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MetricWarning)
            out["f1"] = f1_binary(cm)
    return out


def write_matrix_csv(path, counts: np.ndarray, row_labels: Sequence[str],
                     col_labels: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *col_labels])
        for name, row in zip(row_labels, np.asarray(counts).tolist()):
            w.writerow([name, *row])


def write_heatmap(path, counts: np.ndarray, cell: int = 24) -> None:
    """Row-normalized matrix as a grayscale PGM, ``cell`` pixels per entry."""
    from .spectro import write_pgm

    c = np.asarray(counts, dtype=np.float64)
    rows = c.sum(axis=1, keepdims=True)
    norm = np.where(rows > 0, c / np.maximum(rows, 1), 0.0)
    img = np.kron(norm, np.ones((cell, cell)))
    write_pgm(path, img, lo=0.0, hi=1.0, flip=False)
