"""Ranking metrics for multi-label evaluation.

All metrics score one ranked prediction list against one ground-truth label
set and live in [0, 1]; dataset-level numbers are means over test points,
skipping points with empty ground truth (every ratio is undefined there).

The propensity model is the standard inverse-propensity form used across
the public XC benchmarks: p_l = 1 / (1 + C (f_l + B)^-A) with
C = (log N - 1)(B + 1)^A, defaults A = 0.55, B = 1.5. Propensity-scored
metrics weight hits by 1/p_l and normalize by the best achievable weighted
score for the point, keeping them in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "precision_at_k",
    "recall_at_k",
    "ndcg_at_k",
    "PropensityModel",
    "propensities",
    "psp_at_k",
    "psn_at_k",
    "mean_metric",
]


def _check(predictions, k):
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if len(set(predictions)) != len(predictions):
        raise ConfigError("predictions must be duplicate-free")


def precision_at_k(predictions, relevant, k: int) -> float:
    """|top-k hits| / k; short prediction lists count the gap as misses."""
    _check(predictions, k)
    rel = set(relevant)
    return sum(1 for p in predictions[:k] if p in rel) / k


def recall_at_k(predictions, relevant, k: int) -> float:
    """|top-k hits| / |relevant|; 0 when there is nothing to find."""
    _check(predictions, k)
    rel = set(relevant)
    if not rel:
        return 0.0
    return sum(1 for p in predictions[:k] if p in rel) / len(rel)


def _dcg(gains) -> float:
    return sum(g / math.log2(j + 2) for j, g in enumerate(gains))


def ndcg_at_k(predictions, relevant, k: int) -> float:
    """Binary-gain nDCG; the ideal ranking places min(k, |relevant|) hits first."""
    _check(predictions, k)
    rel = set(relevant)
    if not rel:
        return 0.0
    gains = [1.0 if p in rel else 0.0 for p in predictions[:k]]
    ideal = _dcg([1.0] * min(k, len(rel)))
    return _dcg(gains) / ideal


@dataclass
class PropensityModel:
    """Per-label propensities p_l in (0, 1]."""

    values: np.ndarray
    a: float
    b: float

    def weight(self, label: int) -> float:
        return 1.0 / float(self.values[label])


def propensities(label_frequencies, num_points: int, a: float = 0.55, b: float = 1.5) -> PropensityModel:
    if num_points < 3:
        raise ConfigError(f"propensity model needs N >= 3, got {num_points}")
    if not 0.0 < a < 1.0 or b < 0.0:
        raise ConfigError(f"need A in (0,1) and B >= 0, got A={a} B={b}")
    freq = np.asarray(label_frequencies, dtype=np.float64)
    c = (math.log(num_points) - 1.0) * (b + 1.0) ** a
    vals = 1.0 / (1.0 + c * (freq + b) ** (-a))
    return PropensityModel(vals, a, b)


def psp_at_k(predictions, relevant, model: PropensityModel, k: int) -> float:
    """Propensity-scored precision, normalized by the best reachable score."""
    _check(predictions, k)
    rel = set(relevant)
    if not rel:
        return 0.0
    raw = sum(model.weight(p) for p in predictions[:k] if p in rel) / k
    best_weights = sorted((model.weight(l) for l in rel), reverse=True)[:k]
    best = sum(best_weights) / k
    return raw / best


def psn_at_k(predictions, relevant, model: PropensityModel, k: int) -> float:
    """Propensity-scored nDCG, normalized by the best reachable weighted DCG.

    The normalizer follows from the rearrangement inequality: the largest
    weights go to the least-discounted ranks.
    """
    _check(predictions, k)
    rel = set(relevant)
    if not rel:
        return 0.0
    raw = _dcg([model.weight(p) if p in rel else 0.0 for p in predictions[:k]])
    best_weights = sorted((model.weight(l) for l in rel), reverse=True)[:k]
    best = _dcg(best_weights)
    return raw / best


def mean_metric(per_point_fn, prediction_lists, relevant_sets) -> float:
    """Average a per-point metric, excluding points with no ground truth."""
    scores = [
        per_point_fn(preds, rel)
        for preds, rel in zip(prediction_lists, relevant_sets)
        if len(rel)
    ]
    if not scores:
        return 0.0
    return float(np.mean(scores))
