"""Mini-batch planning and hard-negative selection.

The core strategy clusters data points by their current embeddings, builds
each mini-batch out of whole clusters, pools the batch's positive labels,
and treats any pooled label within a hardness radius of a point (and not
positive for it) as that point's hard negative. Because batch-mates are
nearby, their positives are provably likely to be hard for each other,
giving in-batch mining the quality of index-based mining at a fraction of
the cost.

Three baselines are provided for comparison runs: ``uniform`` (random
batches, all in-batch negatives regardless of radius), ``static_cluster``
(cluster once, never refresh), and ``anns_refresh`` (periodically rebuild a
nearest-neighbor index over all label embeddings and take the globally
nearest non-positive labels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ann
from .clustering import Clustering, within_radius
from .errors import ConfigError

__all__ = [
    "STRATEGIES",
    "MinerConfig",
    "MiniBatchPlan",
    "plan_epoch",
    "select_hard_negatives",
    "curriculum_cluster_size",
    "anns_refresh_negatives",
    "OverheadReport",
    "overhead_report",
]

STRATEGIES = ("ngame", "uniform", "static_cluster", "anns_refresh")


@dataclass
class MinerConfig:
    """Knobs for mini-batch creation and negative selection.

    ``cluster_size`` is the curriculum base value; when the curriculum is
    enabled it doubles every ``curriculum_period`` epochs up to
    ``curriculum_max_size``.
    """

    batch_size: int = 64
    cluster_size: int = 8
    refresh_interval: int = 5
    hardness_radius: float = 1.0
    max_negatives: int = 5
    strategy: str = "ngame"
    curriculum_enabled: bool = False
    curriculum_period: int = 25
    curriculum_max_size: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 1 <= self.cluster_size <= self.batch_size:
            raise ConfigError(
                f"need batch_size >= cluster_size >= 1, got S={self.batch_size} C={self.cluster_size}"
            )
        if self.refresh_interval < 1:
            raise ConfigError(f"refresh interval must be >= 1, got {self.refresh_interval}")
        if not 0.0 < self.hardness_radius <= 2.0:
            raise ConfigError(f"hardness radius must lie in (0, 2], got {self.hardness_radius}")
        if self.max_negatives < 1:
            raise ConfigError(f"negative cap must be >= 1, got {self.max_negatives}")
        if self.curriculum_period < 1:
            raise ConfigError(f"curriculum period must be >= 1, got {self.curriculum_period}")


@dataclass
class MiniBatchPlan:
    """One epoch's batches; together they partition the point set."""

    batches: list[np.ndarray]

    def __iter__(self):
        return iter(self.batches)

    def __len__(self):
        return len(self.batches)


def plan_epoch(clustering: Clustering, batch_size: int, seed: int = 0) -> MiniBatchPlan:
    """Permute clusters and pack them whole into batches of ~batch_size points.

    Every cluster is used exactly once per epoch, so the batches partition
    the points; the last batch may be short.
    """
    c_max = clustering.max_cluster_size
    if batch_size < c_max:
        raise ConfigError(f"batch size {batch_size} is below the largest cluster ({c_max})")
    per_batch = -(-batch_size // c_max)
    rng = np.random.default_rng(seed)
    order = rng.permutation(clustering.num_clusters)
    batches = []
    for start in range(0, order.size, per_batch):
        group = order[start : start + per_batch]
        batches.append(np.concatenate([clustering.members[c] for c in group]))
    return MiniBatchPlan(batches)


def select_hard_negatives(
    point_embeddings: np.ndarray,
    pool_embeddings: np.ndarray,
    pool_label_ids: np.ndarray,
    positive_sets,
    radius: float,
    max_negatives: int | None = None,
):
    """Per-point hard negatives from the batch label pool.

    For batch point ``i`` this returns the pool labels that are not positive
    for it and lie within the hardness radius, sorted by ascending distance
    (ties toward the smaller label id) and truncated to ``max_negatives``
    (None means uncapped). Returned ids are the global ids from
    ``pool_label_ids``.
    """
    points = np.asarray(point_embeddings, dtype=np.float64)
    pool = np.asarray(pool_embeddings, dtype=np.float64)
    pool_ids = np.asarray(pool_label_ids, dtype=np.int64)
    dots = points @ pool.T
    close = within_radius(dots, radius)
    out = []
    for i, pos in enumerate(positive_sets):
        allowed = close[i] & ~np.isin(pool_ids, np.fromiter(pos, dtype=np.int64, count=len(pos)))
        cand = np.nonzero(allowed)[0]
        order = np.lexsort((pool_ids[cand], -dots[i, cand]))
        picked = cand[order]
        if max_negatives is not None:
            picked = picked[:max_negatives]
        out.append(pool_ids[picked])
    return out


def curriculum_cluster_size(base_size: int, epoch: int, doubling_period: int, max_size: int | None = None) -> int:
    """Cluster size doubled every ``doubling_period`` epochs, clamped at max."""
    if doubling_period < 1:
        raise ConfigError(f"doubling period must be >= 1, got {doubling_period}")
    size = base_size << (epoch // doubling_period)
    if max_size is not None:
        size = min(size, max_size)
    return size


def anns_refresh_negatives(
    point_embeddings: np.ndarray,
    label_embeddings: np.ndarray,
    positive_sets,
    max_negatives: int,
    index: ann.MipsIndex | None = None,
):
    """Globally nearest non-positive labels per point, via a label index.

    This is the index-refresh baseline: negatives come from the whole label
    set in distance order, not from the batch pool, and carry the cost of
    rebuilding the index whenever embeddings move.
    """
    if index is None:
        index = ann.build_index(label_embeddings, mode="exact")
    out = []
    for i, x in enumerate(np.asarray(point_embeddings, dtype=np.float64)):
        pos = positive_sets[i]
        hits = ann.query(index, x, max_negatives + len(pos))
        negs = [lab for lab, _ in hits if lab not in pos][:max_negatives]
        out.append(np.asarray(negs, dtype=np.int64))
    return out


@dataclass
class OverheadReport:
    """Per-epoch cost accounting for one mining strategy."""

    strategy: str
    epoch_seconds: float
    sampling_seconds: float
    total_seconds: float
    fraction_increase: float


def overhead_report(strategy, epoch_seconds, sampling_seconds, baseline_epoch_seconds=None) -> OverheadReport:
    """Summarize wall-clock cost of a run.

    ``fraction_increase`` is (epoch + sampling) time over the baseline epoch
    time, where the baseline is a plain in-batch run with no sampling
    machinery; by convention the strategy's own epoch time is used when no
    baseline is given.
    """
    epoch = float(np.mean(epoch_seconds))
    sampling = float(np.mean(sampling_seconds)) if np.size(sampling_seconds) else 0.0
    base = float(baseline_epoch_seconds) if baseline_epoch_seconds is not None else epoch
    if base <= 0:
        raise ConfigError("baseline epoch time must be positive")
    return OverheadReport(strategy, epoch, sampling, epoch + sampling, (epoch + sampling) / base)
