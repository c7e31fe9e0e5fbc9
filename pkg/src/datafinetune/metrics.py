"""Accuracy, confusion matrices, ROC curves and score histograms.

Model-level functions (``accuracy(model, dataset)``) are thin wrappers over
array-level ones (``accuracy_from_scores``) so the latter can be checked
against brute-force oracles without a model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .errors import DimensionError, ValidationError


def _labels_for(model, dataset) -> np.ndarray:
    if dataset.m == 0:
        raise ValidationError("metrics of an empty dataset are undefined")
    if model.attribute not in dataset.labels:
        raise ValidationError(f"dataset has no labels for attribute {model.attribute!r}")
    return dataset.labels[model.attribute]


def predictions(scores) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(scores), axis=1)


def accuracy_from_scores(scores, labels) -> float:
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise DimensionError(f"scores {scores.shape} do not match {labels.shape[0]} labels")
    if labels.shape[0] == 0:
        raise ValidationError("accuracy of an empty dataset is undefined")
    return float(np.count_nonzero(predictions(scores) == labels)) / labels.shape[0]


def accuracy(model, dataset) -> float:
    labels = _labels_for(model, dataset)
    return accuracy_from_scores(mdl.forward(model, dataset.X), labels)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: ground truth, columns: prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rates(self) -> np.ndarray:
        """Row-normalized percentages; rows without samples are all zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(float)
        return np.divide(100.0 * self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def tpr(self, positive: int = 1) -> float:
        return float(self.rates()[positive, positive]) / 100.0

    def tnr(self, positive: int = 1) -> float:
        if self.counts.shape != (2, 2):
            raise ValidationError("TNR is only defined for binary attributes")
        neg = 1 - positive
        return float(self.rates()[neg, neg]) / 100.0

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "rates": self.rates().tolist()}


def confusion_from_predictions(pred, labels, n_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape != labels.shape:
        raise DimensionError("predictions and labels differ in length")
    counts = np.zeros((n_classes, n_classes), np.int64)
    np.add.at(counts, (labels, pred), 1)
    return ConfusionMatrix(counts)


def confusion(model, dataset) -> ConfusionMatrix:
    labels = _labels_for(model, dataset)
    return confusion_from_predictions(predictions(mdl.forward(model, dataset.X)), labels, model.n_classes)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_dict(self) -> dict:
        # thresholds carry +-inf sentinels, which JSON cannot hold
        return {"fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(), "auc": self.auc}


def roc_from_scores(pos_scores, labels, positive: int = 1) -> RocCurve:
    """ROC of a binary attribute, sweeping thresholds over the unique scores.

    A sample counts as positive when its score is >= the threshold, so tied
    scores move together and the trapezoid area gives ties half credit.
    """
    s = np.asarray(pos_scores, dtype=float)
    is_pos = np.asarray(labels) == positive
    n_pos = int(is_pos.sum())
    n_neg = int(is_pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs samples from both classes")
    uniq = np.unique(s)[::-1]
    thresholds = np.concatenate([[np.inf], uniq, [-np.inf]])
    tp = np.array([np.count_nonzero(is_pos & (s >= t)) for t in thresholds], dtype=float)
    fp = np.array([np.count_nonzero(~is_pos & (s >= t)) for t in thresholds], dtype=float)
    tpr, fpr = tp / n_pos, fp / n_neg
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def _require_binary(model) -> None:
    if model.n_classes != 2:
        raise ValidationError(f"attribute {model.attribute!r} has {model.n_classes} classes; ROC needs 2")


def roc(model, dataset, positive: int = 1) -> RocCurve:
    _require_binary(model)
    labels = _labels_for(model, dataset)
    return roc_from_scores(mdl.forward(model, dataset.X)[:, positive], labels, positive)


@dataclass
class ScoreHistogram:
    edges: np.ndarray
    negative: np.ndarray  # counts for samples whose label != positive
    positive: np.ndarray

    @property
    def bins(self) -> int:
        return self.negative.shape[0]

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "negative": self.negative.tolist(),
                "positive": self.positive.tolist(), "overlap": overlap(self)}


def histogram_from_scores(pos_scores, labels, positive: int = 1, bins: int = 20) -> ScoreHistogram:
    if int(bins) < 2:
        raise ValidationError("histograms need at least 2 bins")
    s = np.asarray(pos_scores, dtype=float)
    is_pos = np.asarray(labels) == positive
    if not is_pos.any() or is_pos.all():
        raise ValidationError("histogram needs samples from both classes")
    edges = np.linspace(0.0, 1.0, int(bins) + 1)
    neg, _ = np.histogram(s[~is_pos], bins=edges)
    pos, _ = np.histogram(s[is_pos], bins=edges)
    return ScoreHistogram(edges, neg.astype(np.int64), pos.astype(np.int64))


def histogram(model, dataset, positive: int = 1, bins: int = 20) -> ScoreHistogram:
    labels = _labels_for(model, dataset)
    return histogram_from_scores(mdl.forward(model, dataset.X)[:, positive], labels, positive, bins)


def overlap(hist: ScoreHistogram) -> float:
    """Shared mass of the two normalized class histograms (0 = disjoint, 1 = identical)."""
    neg = hist.negative / hist.negative.sum()
    pos = hist.positive / hist.positive.sum()
    return float(np.minimum(neg, pos).sum())
