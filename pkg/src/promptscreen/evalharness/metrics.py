"""Classification metrics for user-level screening."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from promptscreen.errors import ModelError

METRIC_NAMES = ("auc", "f1", "precision", "recall")


@dataclass(frozen=True)
class Metrics:
    auc: float
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    auc_degenerate: bool = False
    """True when one class was absent and AUC was reported as 0.5."""

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def value(self, name: str) -> float:
        return getattr(self, name)


def confusion(decisions: Sequence[tuple[int, int]]) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)`` from ``(predicted, true)`` pairs."""
    tp = fp = fn = tn = 0
    for pred, true in decisions:
        if pred and true:
            tp += 1
        elif pred:
            fp += 1
        elif true:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def rank_auc(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Mann-Whitney AUC with tied scores averaged; ``None`` if a class is missing."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def compute_metrics(decisions: Sequence[tuple[int, int]], scores: Sequence[tuple[float, int]]) -> Metrics:
    if not decisions or not scores:
        raise ModelError("E-EMPTY", "no predictions to evaluate")
    tp, fp, fn, tn = confusion(decisions)
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    auc = rank_auc([s for s, _ in scores], [y for _, y in scores])
    return Metrics(0.5 if auc is None else auc, f1, precision, recall, tp, fp, fn, tn, auc is None)
