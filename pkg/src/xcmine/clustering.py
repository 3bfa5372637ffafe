"""Balanced hierarchical k-means over unit-norm embeddings.

The splitter recursively bisects the point set, forcing each split into two
halves whose sizes differ by at most one: points are ranked by the
difference of their dot products with the two centroids and the top half
goes to the first side. This keeps every level balanced, yields a final
cluster-size spread of at most one, and runs in O(N D log(N/C)).

Cluster count is a power of two, except that nodes of size one are never
split, so a target cluster size of 1 degenerates to N singletons.

All radius tests on the sphere compare squared distances, 2 - 2*dot <= r*r,
so every module in the toolkit agrees on boundary cases bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["Clustering", "balanced_cluster", "clustering_goodness", "within_radius"]

SPLIT_MAX_ITERS = 20
EXACT_PAIR_CAP = 5000


def within_radius(dots: np.ndarray, radius: float) -> np.ndarray:
    """Distance <= radius between unit vectors, tested on squared form."""
    return (2.0 - 2.0 * dots) <= radius * radius


@dataclass
class Clustering:
    """Partition of point ids into clusters of near-equal size."""

    assignment: np.ndarray
    num_clusters: int
    members: list[np.ndarray]

    @property
    def max_cluster_size(self) -> int:
        return max(m.size for m in self.members)

    def sizes(self) -> np.ndarray:
        return np.array([m.size for m in self.members], dtype=np.int64)


def balanced_cluster(embeddings: np.ndarray, target_cluster_size: int, seed: int = 0) -> Clustering:
    """Cluster N embeddings into balanced clusters of roughly the target size."""
    points = np.asarray(embeddings, dtype=np.float64)
    n = points.shape[0]
    if n < 1:
        raise ConfigError("cannot cluster an empty embedding set")
    size = max(1, min(int(target_cluster_size), n))
    leaves_wanted = -(-n // size)
    depth = (leaves_wanted - 1).bit_length()

    nodes = [np.arange(n, dtype=np.int64)]
    node_id = 0
    for _ in range(depth):
        next_nodes = []
        for idx in nodes:
            node_id += 1
            if idx.size < 2:
                next_nodes.append(idx)
                continue
            left, right = _split_once(points, idx, np.random.default_rng([seed, node_id]))
            next_nodes.extend((left, right))
        nodes = next_nodes

    members = [np.sort(idx) for idx in nodes]
    assignment = np.empty(n, dtype=np.int64)
    for cid, idx in enumerate(members):
        assignment[idx] = cid
    return Clustering(assignment, len(members), members)


def _split_once(points, idx, rng):
    """Spherical 2-means with ranked-difference balanced assignment."""
    sub = points[idx]
    m = idx.size
    top = (m + 1) // 2
    seeds = rng.choice(m, size=2, replace=False)
    c1, c2 = sub[seeds[0]], sub[seeds[1]]
    total = sub.sum(axis=0)
    mask = None
    score = None
    for _ in range(SPLIT_MAX_ITERS):
        score = sub @ (c1 - c2)
        picked = np.argpartition(-score, top - 1)[:top] if top < m else np.arange(m)
        new_mask = np.zeros(m, dtype=bool)
        new_mask[picked] = True
        if mask is not None and np.array_equal(new_mask, mask):
            break
        mask = new_mask
        sum_top = mask.astype(np.float64) @ sub
        c1 = _direction(sum_top, sub[picked[0]])
        c2 = _direction(total - sum_top, sub[np.argmin(mask)])
    # One stable ranking at the end keeps the tie rule (and the
    # all-points-identical degenerate case) on index order.
    order = np.argsort(-score, kind="stable")
    return idx[order[:top]], idx[order[top:]]


def _direction(vec, fallback):
    norm = np.linalg.norm(vec)
    if norm <= 1e-12:
        return fallback
    return vec / norm


def clustering_goodness(
    embeddings: np.ndarray,
    clustering: Clustering,
    radius: float,
    mode: str = "exact",
    num_samples: int = 100_000,
    seed: int = 0,
    exact_cap: int = EXACT_PAIR_CAP,
) -> float:
    """Fraction of ordered point pairs within the radius yet split apart.

    Exact mode enumerates all N^2 ordered pairs including the diagonal
    (never split, so it only dilutes the rate). Sampled mode draws
    ``num_samples`` ordered pairs uniformly with replacement.
    """
    points = np.asarray(embeddings, dtype=np.float64)
    n = points.shape[0]
    assign = clustering.assignment
    if mode == "exact":
        if n > exact_cap:
            raise ConfigError(f"exact mode capped at {exact_cap} points, got {n}")
        hits = 0
        chunk = max(1, min(n, 2_000_000 // max(n, 1)))
        for start in range(0, n, chunk):
            block = slice(start, min(start + chunk, n))
            close = within_radius(points[block] @ points.T, radius)
            split = assign[block, None] != assign[None, :]
            hits += int(np.count_nonzero(close & split))
        return hits / float(n * n)
    if mode == "sampled":
        rng = np.random.default_rng(seed)
        left = rng.integers(0, n, size=num_samples)
        right = rng.integers(0, n, size=num_samples)
        dots = np.einsum("ij,ij->i", points[left], points[right])
        hits = np.count_nonzero(within_radius(dots, radius) & (assign[left] != assign[right]))
        return hits / float(num_samples)
    raise ConfigError(f"unknown goodness mode {mode!r}")
