"""Prediction pipeline: shortlist, score with both heads, fuse, rank.

A query is embedded once, a maximum-inner-product index over the classifier
rows supplies a shortlist, and every shortlisted label gets the fused score

    tree(descriptor) + siamese_score + classifier_score

where the descriptor is (siamese_score, classifier_score, label training
frequency) and the tree is a depth-capped regression tree fit to predict
relevance tags on held-out pairs. With fusion disabled, ranking falls back
to the classifier score alone. Cost per query: one encoder call, one index
query, and O(shortlist) scoring.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import ann, encoder
from .errors import ConfigError, FormatError

__all__ = [
    "FusionModel",
    "fit_tree",
    "build_fusion_training_set",
    "predict",
    "save_fusion",
    "load_fusion",
    "DESCRIPTOR_FIELDS",
]

DESCRIPTOR_FIELDS = ("siamese_score", "classifier_score", "label_frequency")
DEFAULT_MAX_DEPTH = 7
DEFAULT_MIN_LEAF = 16
SHORTLIST_FLOOR = 100

_FUSION_MAGIC = b"XCFUSTRE"
_FUSION_VERSION = 1
_NODE = struct.Struct("<idd")


@dataclass
class FusionModel:
    """Axis-aligned binary regression tree over 3-feature descriptors."""

    feature: int
    threshold: float
    value: float
    left: "FusionModel | None" = None
    right: "FusionModel | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def predict_one(self, descriptor) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if descriptor[node.feature] <= node.threshold else node.right
        return node.value

    def predict(self, descriptors) -> np.ndarray:
        data = np.asarray(descriptors, dtype=np.float64)
        return np.array([self.predict_one(row) for row in data])

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


def fit_tree(descriptors, targets, max_depth: int = DEFAULT_MAX_DEPTH, min_leaf: int = DEFAULT_MIN_LEAF) -> FusionModel:
    """Greedy variance-reduction CART fit; leaves predict the mean target."""
    data = np.asarray(descriptors, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ConfigError("need at least one training pair")
    if y.shape[0] != data.shape[0]:
        raise ConfigError("descriptor and target counts differ")
    if min_leaf < 1 or max_depth < 0:
        raise ConfigError("min_leaf must be >= 1 and max_depth >= 0")
    return _grow(data, y, depth_left=max_depth, min_leaf=min_leaf)


def _grow(data, y, depth_left, min_leaf):
    mean = float(y.mean())
    if depth_left == 0 or y.size < 2 * min_leaf or np.all(y == y[0]):
        return FusionModel(-1, np.nan, mean)
    split = _best_split(data, y, min_leaf)
    if split is None:
        return FusionModel(-1, np.nan, mean)
    feature, threshold = split
    mask = data[:, feature] <= threshold
    left = _grow(data[mask], y[mask], depth_left - 1, min_leaf)
    right = _grow(data[~mask], y[~mask], depth_left - 1, min_leaf)
    return FusionModel(feature, threshold, mean, left, right)


def _best_split(data, y, min_leaf):
    best = None
    best_sse = np.inf
    n = y.size
    for feature in range(data.shape[1]):
        order = np.argsort(data[:, feature], kind="stable")
        vals = data[order, feature]
        sorted_y = y[order]
        csum = np.cumsum(sorted_y)
        csq = np.cumsum(sorted_y * sorted_y)
        total, total_sq = csum[-1], csq[-1]
        # Split after position s (1-based count on the left side).
        for s in range(min_leaf, n - min_leaf + 1):
            if vals[s - 1] == vals[s]:
                continue
            left_sse = csq[s - 1] - csum[s - 1] ** 2 / s
            right_sum = total - csum[s - 1]
            right_sse = (total_sq - csq[s - 1]) - right_sum ** 2 / (n - s)
            sse = left_sse + right_sse
            if sse < best_sse - 1e-15:
                best_sse = sse
                best = (feature, float((vals[s - 1] + vals[s]) / 2.0))
    return best


def build_fusion_training_set(
    dataset,
    point_ids,
    params: encoder.EncoderParams,
    classifier_vectors: np.ndarray,
    label_embeddings: np.ndarray,
    index: ann.MipsIndex,
    shortlist_size: int,
    label_frequencies=None,
):
    """Descriptor/target pairs over shortlist-union-positives for each point.

    Targets are 1 for ground-truth positives and 0 otherwise; positives
    missing from the shortlist are still included so the tree sees them.
    """
    point_ids = list(point_ids)
    if not point_ids:
        raise ConfigError("fusion training needs a non-empty validation set")
    if label_frequencies is None:
        label_frequencies = np.array([p.size for p in dataset.label_to_points], dtype=np.float64)
    freqs = np.asarray(label_frequencies, dtype=np.float64)

    rows, targets = [], []
    for i in point_ids:
        emb = encoder.embed(params, dataset.point_features[i])
        shortlist = {lab for lab, _ in ann.query(index, emb, shortlist_size)}
        candidates = sorted(shortlist | dataset.positive_sets[i])
        for lab in candidates:
            rows.append(
                (
                    float(label_embeddings[lab] @ emb),
                    float(classifier_vectors[lab] @ emb),
                    freqs[lab],
                )
            )
            targets.append(1.0 if lab in dataset.positive_sets[i] else 0.0)
    return np.array(rows, dtype=np.float64), np.array(targets, dtype=np.float64)


def predict(
    x,
    params: encoder.EncoderParams,
    classifier_vectors: np.ndarray,
    label_embeddings: np.ndarray,
    label_frequencies,
    fusion: FusionModel | None,
    index: ann.MipsIndex,
    k: int,
    shortlist_size: int | None = None,
):
    """Rank labels for one sparse input; returns [(label, fused score)].

    The shortlist comes from the classifier index and has size
    max(k, shortlist_size), defaulting to max(100, 2k), clamped to the
    label count. Without a fusion model the classifier score is the
    ranking score.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    num_labels = classifier_vectors.shape[0]
    if shortlist_size is None:
        shortlist_size = max(SHORTLIST_FLOOR, 2 * k)
    width = min(max(k, shortlist_size), num_labels)

    emb = encoder.embed(params, x)
    shortlist = np.array([lab for lab, _ in ann.query(index, emb, width)], dtype=np.int64)
    classifier_scores = classifier_vectors[shortlist] @ emb
    if fusion is None:
        fused = classifier_scores
    else:
        siamese_scores = label_embeddings[shortlist] @ emb
        freqs = np.asarray(label_frequencies, dtype=np.float64)[shortlist]
        descriptors = np.stack([siamese_scores, classifier_scores, freqs], axis=1)
        fused = fusion.predict(descriptors) + siamese_scores + classifier_scores
    order = np.lexsort((shortlist, -fused))[:k]
    return [(int(shortlist[i]), float(fused[i])) for i in order]


def _write_preorder(node, records):
    if node.is_leaf:
        records.append(_NODE.pack(-1, 0.0, node.value))
    else:
        records.append(_NODE.pack(node.feature, node.threshold, node.value))
        _write_preorder(node.left, records)
        _write_preorder(node.right, records)


def save_fusion(path, model: FusionModel):
    """Preorder node list in a versioned binary record."""
    records: list[bytes] = []
    _write_preorder(model, records)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIQ", _FUSION_MAGIC, _FUSION_VERSION, len(records)))
        fh.writelines(records)


def load_fusion(path) -> FusionModel:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<8sIQ"))
        magic, version, count = struct.unpack("<8sIQ", header)
        if magic != _FUSION_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != _FUSION_VERSION:
            raise FormatError(f"{path}: unsupported fusion version {version}")
        payload = fh.read()
    if len(payload) != count * _NODE.size:
        raise FormatError(f"{path}: expected {count} nodes, payload has {len(payload)} bytes")
    nodes = [_NODE.unpack_from(payload, i * _NODE.size) for i in range(count)]
    cursor = iter(nodes)

    def build():
        feature, threshold, value = next(cursor)
        if feature < 0:
            return FusionModel(-1, np.nan, value)
        left = build()
        right = build()
        return FusionModel(feature, threshold, value, left, right)

    try:
        model = build()
    except StopIteration as exc:
        raise FormatError(f"{path}: truncated preorder node list") from exc
    if next(cursor, None) is not None:
        raise FormatError(f"{path}: trailing nodes after tree reconstruction")
    return model
