"""Ranking agreement between private scores and the noise-free reference."""

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import GraphValidationError


@dataclass
class Ranking:
    """Node ids by descending score, ties broken by ascending id."""
    order: np.ndarray
    scores: np.ndarray
    # fewer than R eligible nodes were available
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.order)


def top_r(scores: np.ndarray, R: int, exclude: Optional[Iterable[int]] = None) -> Ranking:
    """
    Top-R node ids by score, skipping ``exclude``.

    Args:
        scores: Score vector
        R: Cutoff, >= 1
        exclude: Node ids left out (typically the seed)

    Returns:
        Ranking of length min(R, eligible count)
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    scores = np.asarray(scores, dtype=np.float64)
    eligible = np.ones(len(scores), dtype=bool)
    if exclude is not None:
        excluded = np.asarray(list(exclude), dtype=np.int64)
        if np.any((excluded < 0) | (excluded >= len(scores))):
            raise GraphValidationError(f"excluded node ids must lie in [0, {len(scores)})")
        eligible[excluded] = False
    ids = np.flatnonzero(eligible)
    order = ids[np.lexsort((ids, -scores[ids]))]
    truncated = len(order) < R
    order = order[:R]
    return Ranking(order=order, scores=scores[order], truncated=truncated)


def _check_pair(approx: np.ndarray, true: np.ndarray):
    approx = np.asarray(approx, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if approx.shape != true.shape:
        raise GraphValidationError(f"score lengths differ: {approx.shape} vs {true.shape}")
    return approx, true


def _dcg(gains: np.ndarray) -> float:
    return float(np.sum(gains / np.log2(np.arange(2, len(gains) + 2))))


def ndcg_at_r(approx_scores: np.ndarray, true_scores: np.ndarray, R: int,
              exclude: Optional[Iterable[int]] = None, binary: bool = False) -> float:
    """
    NDCG@R of the approximate ranking.

    The gain of node v is true_scores[v] (graded) or its membership in the
    true top-R (binary). Returns 1.0 when the ideal DCG is zero.
    """
    approx, true = _check_pair(approx_scores, true_scores)
    exclude = None if exclude is None else list(exclude)
    predicted = top_r(approx, R, exclude).order
    ideal = top_r(true, R, exclude).order
    if binary:
        relevance = np.zeros(len(true))
        relevance[ideal] = 1.0
    else:
        if np.any(true < 0):
            raise ValueError("graded relevance needs nonnegative true scores")
        relevance = true
    idcg = _dcg(relevance[ideal])
    if idcg == 0:
        return 1.0
    return min(_dcg(relevance[predicted]) / idcg, 1.0)


def recall_at_r(approx_scores: np.ndarray, true_scores: np.ndarray, R: int,
                exclude: Optional[Iterable[int]] = None) -> float:
    """Overlap of the two top-R sets divided by R (or the eligible count when smaller)."""
    approx, true = _check_pair(approx_scores, true_scores)
    exclude = None if exclude is None else list(exclude)
    predicted = top_r(approx, R, exclude).order
    ideal = top_r(true, R, exclude).order
    if len(ideal) == 0:
        return 1.0
    return len(np.intersect1d(predicted, ideal)) / len(ideal)
