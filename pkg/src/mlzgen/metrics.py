"""Ranking metrics for multi-label evaluation: mAP and top-K P/R/F1.

Scores are ranked descending with ties broken toward the lower image
index (stable sort on the negated scores).  Average precision for one
label averages precision-at-rank over the positive ranks; labels with no
positive instance return a skip marker (None) and are excluded from the
mean rather than counted as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class EvalTable:
    """Score matrix (images x labels) plus per-image truth label columns."""

    scores: np.ndarray
    truths: list  # per image, iterable of column indices
    universe: str = "zsl"  # which label universe the columns span

    def __post_init__(self):
        self.scores = np.atleast_2d(np.asarray(self.scores, dtype=np.float64))
        if len(self.truths) != self.scores.shape[0]:
            raise MetricsError("one truth set per score row is required")
        k = self.scores.shape[1]
        cleaned = []
        for i, t in enumerate(self.truths):
            t = tuple(sorted(set(int(x) for x in t)))
            if any(not 0 <= x < k for x in t):
                raise MetricsError(f"image {i}: truth label outside the score table")
            cleaned.append(t)
        self.truths = cleaned

    def truth_matrix(self) -> np.ndarray:
        out = np.zeros_like(self.scores)
        for i, t in enumerate(self.truths):
            out[i, list(t)] = 1.0
        return out


def average_precision(scores, truth) -> float | None:
    """AP for one label column; None when the label has no positives."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if scores.shape != truth.shape:
        raise MetricsError("scores and truth must align")
    positives = truth.sum()
    if positives == 0:
        return None
    order = np.argsort(-scores, kind="stable")  # ties -> lower image index first
    hits = truth[order]
    precision_at = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision_at[hits > 0].sum() / positives)


def mean_ap(table: EvalTable) -> float:
    """Unweighted mean AP over labels that have at least one positive."""
    truth = table.truth_matrix()
    values = []
    for j in range(table.scores.shape[1]):
        ap = average_precision(table.scores[:, j], truth[:, j])
        if ap is not None:
            values.append(ap)
    if not values:
        raise MetricsError("no label in the table has a positive instance")
    return float(np.mean(values))


def topk_prf(table: EvalTable, k: int) -> tuple[float, float, float]:
    """Corpus-aggregated precision/recall/F1 of the per-image top-k labels."""
    n, width = table.scores.shape
    if not 1 <= k <= width:
        raise MetricsError(f"k={k} must lie in [1, {width}]")
    hits = 0
    positives = 0
    for i in range(n):
        order = np.argsort(-table.scores[i], kind="stable")[:k]
        truth = set(table.truths[i])
        hits += len(truth.intersection(order.tolist()))
        positives += len(truth)
    precision = hits / (n * k)
    recall = hits / positives if positives else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(precision), float(recall), float(f1)


def random_score_baseline(table: EvalTable, seed: int = 0, trials: int = 5) -> float:
    """Chance-level mAP: the table's own score rows shuffled across images.

    Shuffling keeps any per-class score bias while destroying the
    score-truth association, so it is a fair null for ranking quality.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 71]))
    values = []
    for _ in range(trials):
        perm = rng.permutation(table.scores.shape[0])
        shuffled = EvalTable(table.scores[perm], list(table.truths), table.universe)
        values.append(mean_ap(shuffled))
    return float(np.mean(values))
