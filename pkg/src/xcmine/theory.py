"""Exact verification of the hard-negative retrieval guarantee.

The miner can only miss an r-hard negative label for a point when every
point that has that label as a positive sits in a different cluster. The
guarantee bounds the rate of such misses, averaged over all point-label
pairs, by

    missed_rate <= c_embed * far_positive_frac + c_cluster * split_pair_frac

where ``far_positive_frac`` is the fraction of positive pairs embedded more
than r apart, ``split_pair_frac`` is the fraction of ordered point pairs
within 2r yet split across clusters, and the two coefficients depend only
on relevance-count statistics:

    c_embed   = mean_points_per_label * (mu + sigma_ratio * sqrt(L)) / N
    c_cluster = (mean_labels_per_point + sigma_count * sqrt(N)) * N / (q_min * L)

with mu and sigma_ratio the mean and standard deviation of (N - q_l) / q_l
over labels, sigma_count the standard deviation of per-point positive
counts, and q_min the smallest per-label positive count (which must be at
least 1). In the fully balanced case both coefficients are at most 1 and
c_cluster is exactly 1.

Everything here is computed by exhaustive enumeration; the verification
retrieval pass uses whole-cluster batches and no negative cap so it matches
the setting the guarantee is proved in, not the capped training-time knob.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import encoder, negmine
from .clustering import Clustering, balanced_cluster, clustering_goodness, within_radius
from .dataset import Dataset, DatasetStats, compute_stats
from .errors import DegenerateInput

__all__ = [
    "GoodnessReport",
    "embedding_goodness",
    "bound_constants",
    "full_coverage_retrieval",
    "bad_event_rate",
    "verify_bound",
]

RELATIVE_SLACK = 1e-12


@dataclass
class GoodnessReport:
    radius: float
    far_positive_frac: float
    split_pair_frac: float
    missed_rate: float
    embed_coeff: float
    cluster_coeff: float
    bound: float
    holds: bool

    def as_text(self) -> str:
        lines = [
            f"radius = {self.radius:.6g}",
            f"far_positive_frac = {self.far_positive_frac:.12g}",
            f"split_pair_frac = {self.split_pair_frac:.12g}",
            f"missed_rate = {self.missed_rate:.12g}",
            f"embed_coeff = {self.embed_coeff:.12g}",
            f"cluster_coeff = {self.cluster_coeff:.12g}",
            f"bound = {self.bound:.12g}",
            f"holds = {str(self.holds).lower()}",
        ]
        return "\n".join(lines)


def embedding_goodness(dataset: Dataset, point_embs, label_embs, radius: float) -> float:
    """Fraction of (point, positive label) pairs embedded farther than radius.

    The probability is uniform over positive pairs, so points with many
    positives weigh proportionally more; points with none contribute no
    pairs at all.
    """
    points = np.asarray(point_embs, dtype=np.float64)
    labels = np.asarray(label_embs, dtype=np.float64)
    total = far = 0
    for i, pos in enumerate(dataset.point_to_labels):
        if not pos.size:
            continue
        dots = labels[pos] @ points[i]
        far += int(np.count_nonzero(~within_radius(dots, radius)))
        total += pos.size
    if total == 0:
        raise DegenerateInput("no positive pairs to measure")
    return far / total


def bound_constants(stats: DatasetStats, num_points: int, num_labels: int):
    """The two dataset-dependent coefficients of the retrieval bound."""
    if stats.min_points_per_label < 1 or not stats.bound_usable:
        raise DegenerateInput("bound constants need every label to have at least one positive point")
    sigma_ratio = math.sqrt(stats.irrelevant_ratio_var)
    sigma_count = math.sqrt(stats.labels_per_point_var)
    c_embed = (
        stats.mean_points_per_label
        * (stats.irrelevant_ratio_mean + sigma_ratio * math.sqrt(num_labels))
        / num_points
    )
    c_cluster = (
        (stats.mean_labels_per_point + sigma_count * math.sqrt(num_points))
        * num_points
        / (stats.min_points_per_label * num_labels)
    )
    return c_embed, c_cluster


def full_coverage_retrieval(dataset: Dataset, point_embs, label_embs, clustering: Clustering, radius: float):
    """One uncapped mining pass with batch = whole cluster, for every point.

    Returns a per-point array of retrieved negative label ids. This mirrors
    the mining step the guarantee reasons about: the candidate pool is the
    union of batch positives and every in-radius non-positive candidate is
    retrieved.
    """
    points = np.asarray(point_embs, dtype=np.float64)
    labels = np.asarray(label_embs, dtype=np.float64)
    retrieved = [None] * dataset.num_points
    for members in clustering.members:
        pool = np.unique(
            np.concatenate([dataset.point_to_labels[i] for i in members.tolist()])
        ) if members.size else np.empty(0, dtype=np.int64)
        if not pool.size:
            for i in members.tolist():
                retrieved[i] = np.empty(0, dtype=np.int64)
            continue
        found = negmine.select_hard_negatives(
            points[members],
            labels[pool],
            pool,
            [dataset.positive_sets[i] for i in members.tolist()],
            radius,
            max_negatives=None,
        )
        for row, i in enumerate(members.tolist()):
            retrieved[i] = found[row]
    return retrieved


def bad_event_rate(dataset: Dataset, point_embs, label_embs, retrieved, radius: float) -> float:
    """Rate of in-radius non-positive labels the miner failed to retrieve.

    Exhaustive over all N*L point-label pairs.
    """
    points = np.asarray(point_embs, dtype=np.float64)
    labels = np.asarray(label_embs, dtype=np.float64)
    n, m = dataset.num_points, dataset.num_labels
    close = within_radius(points @ labels.T, radius)
    positive = np.zeros((n, m), dtype=bool)
    for i, pos in enumerate(dataset.point_to_labels):
        positive[i, pos] = True
    got = np.zeros((n, m), dtype=bool)
    for i, ids in enumerate(retrieved):
        got[i, ids] = True
    missed = close & ~positive & ~got
    return int(np.count_nonzero(missed)) / float(n * m)


def verify_bound(
    dataset: Dataset,
    params: encoder.EncoderParams,
    miner: negmine.MinerConfig,
    radius: float,
    seed: int = 0,
) -> GoodnessReport:
    """Cluster, run the verification retrieval pass, and check the bound.

    Embedding goodness is measured at the mining radius and clustering
    goodness at twice that radius, matching the triangle-inequality
    argument behind the guarantee. The verdict allows 1e-12 relative slack
    for float rounding; the underlying inequality is exact.
    """
    stats = compute_stats(dataset)
    c_embed, c_cluster = bound_constants(stats, dataset.num_points, dataset.num_labels)
    point_embs = encoder.embed_batch(params, dataset.point_features)
    label_embs = encoder.embed_batch(params, dataset.label_features)
    clustering = balanced_cluster(point_embs, miner.cluster_size, seed=seed)

    eps_embed = embedding_goodness(dataset, point_embs, label_embs, radius)
    eps_cluster = clustering_goodness(point_embs, clustering, 2.0 * radius, mode="exact")
    retrieved = full_coverage_retrieval(dataset, point_embs, label_embs, clustering, radius)
    missed = bad_event_rate(dataset, point_embs, label_embs, retrieved, radius)

    bound = c_embed * eps_embed + c_cluster * eps_cluster
    holds = missed <= bound + RELATIVE_SLACK * max(1.0, abs(bound))
    return GoodnessReport(
        radius=radius,
        far_positive_frac=eps_embed,
        split_pair_frac=eps_cluster,
        missed_rate=missed,
        embed_coeff=c_embed,
        cluster_coeff=c_cluster,
        bound=bound,
        holds=holds,
    )
