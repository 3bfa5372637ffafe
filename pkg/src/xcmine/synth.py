"""Synthetic corpora with planted cluster structure.

The vocabulary is carved into disjoint zones: a per-cluster anchor block
shared by everything in the cluster, a private token group per label, one
identity token per point, and a residual shared pool. A label's features
are its cluster anchors plus its own tokens; a point's features are its
cluster anchors, the tokens of its planted positive labels, an optional
identity token (which makes the task non-trivial for an untrained encoder),
and, below full token overlap, extra draws from the shared pool that blur
cluster boundaries.

Ground-truth positives are assigned round-robin within the cluster, so with
divisible counts and zero noise the corpus is exactly balanced. Label noise
rewires a fraction of planted positives to uniformly random labels without
touching features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, SparseVector, build_dataset
from .errors import ConfigError

__all__ = ["SynthSpec", "GeneratedData", "generate"]

ANCHOR_TOKENS = 4
LABEL_TOKENS = 2


@dataclass
class SynthSpec:
    num_clusters: int = 4
    points_per_cluster: int = 25
    labels_per_cluster: int = 5
    vocab_size: int = 512
    dim: int = 16
    token_overlap: float = 1.0
    noise_rate: float = 0.0
    seed: int = 0
    positives_per_point: int = 1
    identity_weight: float = 0.0
    decoys_per_point: int = 0
    decoy_weight: float = 0.6

    def __post_init__(self):
        for name in ("num_clusters", "points_per_cluster", "labels_per_cluster", "vocab_size", "dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("token_overlap", "noise_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 1 <= self.positives_per_point <= self.labels_per_cluster:
            raise ConfigError("positives_per_point must lie in [1, labels_per_cluster]")
        if self.identity_weight < 0 or self.decoy_weight < 0:
            raise ConfigError("token weights must be non-negative")
        if not 0 <= self.decoys_per_point <= self.labels_per_cluster - self.positives_per_point:
            raise ConfigError("decoys_per_point must leave room for the positives in the cluster")

    @property
    def num_points(self) -> int:
        return self.num_clusters * self.points_per_cluster

    @property
    def num_labels(self) -> int:
        return self.num_clusters * self.labels_per_cluster

    def tokens_needed(self) -> int:
        base = self.num_clusters * ANCHOR_TOKENS + self.num_labels * LABEL_TOKENS + self.num_points
        return base + (1 if self.token_overlap < 1.0 else 0)


@dataclass
class GeneratedData:
    dataset: Dataset
    point_clusters: np.ndarray
    label_clusters: np.ndarray


def generate(spec: SynthSpec) -> GeneratedData:
    """Deterministically generate a corpus from the spec and its seed."""
    if spec.vocab_size < spec.tokens_needed():
        raise ConfigError(
            f"vocab_size {spec.vocab_size} too small, need at least {spec.tokens_needed()}"
        )
    rng = np.random.default_rng(spec.seed)
    vocab = spec.vocab_size
    anchor_base = 0
    label_base = spec.num_clusters * ANCHOR_TOKENS
    identity_base = label_base + spec.num_labels * LABEL_TOKENS
    shared_base = identity_base + spec.num_points
    shared_size = vocab - shared_base

    def anchor_tokens(cluster):
        start = anchor_base + cluster * ANCHOR_TOKENS
        return list(range(start, start + ANCHOR_TOKENS))

    def label_tokens(label):
        start = label_base + label * LABEL_TOKENS
        return list(range(start, start + LABEL_TOKENS))

    blur_draws = int(round((1.0 - spec.token_overlap) * ANCHOR_TOKENS))

    def blur_entries():
        if blur_draws == 0 or shared_size == 0:
            return []
        picks = rng.choice(shared_size, size=min(blur_draws, shared_size), replace=False)
        return [(shared_base + int(t), 1.0) for t in picks]

    labels = []
    label_clusters = np.empty(spec.num_labels, dtype=np.int64)
    for c in range(spec.num_clusters):
        for j in range(spec.labels_per_cluster):
            lab = c * spec.labels_per_cluster + j
            label_clusters[lab] = c
            entries = [(t, 1.0) for t in anchor_tokens(c) + label_tokens(lab)]
            entries += blur_entries()
            labels.append(_to_vector(entries, vocab))

    planted = []
    points = []
    point_clusters = np.empty(spec.num_points, dtype=np.int64)
    for c in range(spec.num_clusters):
        for j in range(spec.points_per_cluster):
            pid = c * spec.points_per_cluster + j
            point_clusters[pid] = c
            mine = [
                c * spec.labels_per_cluster + (j + t) % spec.labels_per_cluster
                for t in range(spec.positives_per_point)
            ]
            planted.append(mine)
            entries = [(t, 1.0) for t in anchor_tokens(c)]
            for lab in mine:
                entries += [(t, 1.0) for t in label_tokens(lab)]
            if spec.decoys_per_point:
                # Confusable tokens from sibling labels of the same cluster;
                # only margin training against those labels untangles them.
                others = [
                    c * spec.labels_per_cluster + t
                    for t in range(spec.labels_per_cluster)
                    if c * spec.labels_per_cluster + t not in mine
                ]
                picks = rng.choice(len(others), size=min(spec.decoys_per_point, len(others)), replace=False)
                for o in picks:
                    entries += [(t, spec.decoy_weight) for t in label_tokens(others[int(o)])]
            if spec.identity_weight > 0:
                entries.append((identity_base + pid, spec.identity_weight))
            entries += blur_entries()
            points.append(_to_vector(entries, vocab))

    relevance = []
    for mine in planted:
        noisy = [
            int(rng.integers(0, spec.num_labels)) if rng.random() < spec.noise_rate else lab
            for lab in mine
        ]
        relevance.append(sorted(set(noisy)))

    dataset = build_dataset(points, labels, relevance)
    return GeneratedData(dataset, point_clusters, label_clusters)


def _to_vector(entries, vocab):
    merged: dict[int, float] = {}
    for token, value in entries:
        merged[token] = merged.get(token, 0.0) + value
    return SparseVector.from_entries(sorted(merged.items()), vocab)
