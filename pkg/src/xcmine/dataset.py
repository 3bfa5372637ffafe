"""Sparse multi-label datasets in the classic XC repository text format.

A dataset couples three things: sparse bag-of-token features for every data
point, sparse features for every label, and a bidirectional relevance
adjacency (point -> positive labels and its transpose). Point and label
features share one vocabulary so a single encoder can embed both sides.

File format: a header line ``num_rows num_features num_labels`` followed by
one row per data point, ``l1,l2,... f1:v1 f2:v2 ...``. The label list may be
empty, which leaves a leading space on the line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, RangeError

__all__ = [
    "SparseVector",
    "Dataset",
    "DatasetStats",
    "ParsedSparseFile",
    "parse_sparse_file",
    "write_sparse_file",
    "build_dataset",
    "load_dataset",
    "compute_stats",
]


@dataclass(frozen=True)
class SparseVector:
    """Sparse feature vector: strictly increasing ids, finite values."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if self.dim <= 0:
            raise RangeError(f"dimensionality must be positive, got {self.dim}")
        if idx.shape != val.shape or idx.ndim != 1:
            raise FormatError("indices and values must be parallel 1-d arrays")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise RangeError(
                    f"feature id out of range [0, {self.dim}): {idx[idx < 0] if idx[0] < 0 else idx[-1]}"
                )
            if np.any(np.diff(idx) <= 0):
                raise FormatError("feature ids must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise ValueError("feature values must be finite")

    @classmethod
    def from_entries(cls, entries, dim: int) -> "SparseVector":
        entries = sorted(entries)
        idx = np.array([e[0] for e in entries], dtype=np.int64)
        val = np.array([e[1] for e in entries], dtype=np.float64)
        return cls(idx, val, dim)

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass
class ParsedSparseFile:
    rows: list[SparseVector]
    labels: list[list[int]]
    num_features: int
    num_labels: int


def parse_sparse_file(path) -> ParsedSparseFile:
    """Parse one XC-format sparse text file.

    Returns one SparseVector and one sorted duplicate-free label-id list per
    row. The header is authoritative: rows referencing features or labels at
    or beyond the declared counts raise RangeError, a row-count mismatch
    raises FormatError, and non-finite feature values raise ValueError.
    """
    with open(path, "r", encoding="utf-8", newline=None) as fh:
        header = fh.readline()
        if not header.strip():
            raise FormatError(f"{path}: missing header line")
        parts = header.split()
        if len(parts) != 3:
            raise FormatError(f"{path}: header must be 'num_rows num_features num_labels'")
        try:
            num_rows, num_features, num_labels = (int(p) for p in parts)
        except ValueError as exc:
            raise FormatError(f"{path}: non-integer header field: {header!r}") from exc
        if num_rows < 0 or num_features <= 0 or num_labels < 0:
            raise FormatError(f"{path}: nonsensical header counts {parts}")

        rows: list[SparseVector] = []
        label_lists: list[list[int]] = []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\r\n")
            if len(rows) >= num_rows:
                if line.strip():
                    raise FormatError(f"{path}: more rows than the header declares")
                continue
            labels, vector = _parse_row(line, num_features, num_labels, path, lineno)
            rows.append(vector)
            label_lists.append(labels)

    if len(rows) != num_rows:
        raise FormatError(
            f"{path}: header declares {num_rows} rows but file has {len(rows)}"
        )
    return ParsedSparseFile(rows, label_lists, num_features, num_labels)


def _parse_row(line, num_features, num_labels, path, lineno):
    if line.startswith(" "):
        label_part, feat_part = "", line[1:]
    else:
        chunks = line.split(" ", 1)
        label_part = chunks[0]
        feat_part = chunks[1] if len(chunks) == 2 else ""

    labels: list[int] = []
    if label_part:
        for tok in label_part.split(","):
            try:
                lab = int(tok)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad label id {tok!r}") from exc
            if lab < 0 or lab >= num_labels:
                raise RangeError(f"{path}:{lineno}: label id {lab} >= {num_labels}")
            labels.append(lab)
    labels = sorted(set(labels))

    entries: list[tuple[int, float]] = []
    for tok in feat_part.split():
        fid_s, _, val_s = tok.partition(":")
        if not val_s:
            raise FormatError(f"{path}:{lineno}: bad feature token {tok!r}")
        try:
            fid = int(fid_s)
            val = float(val_s)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad feature token {tok!r}") from exc
        if fid < 0 or fid >= num_features:
            raise RangeError(f"{path}:{lineno}: feature id {fid} >= {num_features}")
        if not math.isfinite(val):
            raise ValueError(f"{path}:{lineno}: non-finite feature value {val_s!r}")
        entries.append((fid, val))

    entries.sort()
    ids = [e[0] for e in entries]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}:{lineno}: duplicate feature id")
    return labels, SparseVector.from_entries(entries, num_features)


def write_sparse_file(path, rows, label_lists, num_features: int, num_labels: int):
    """Write the XC sparse text format (inverse of parse_sparse_file)."""
    if len(rows) != len(label_lists):
        raise FormatError("rows and label lists must have equal length")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(rows)} {num_features} {num_labels}\n")
        for vec, labs in zip(rows, label_lists):
            lab_part = ",".join(str(l) for l in sorted(set(labs)))
            feat_part = " ".join(
                f"{i}:{v:.17g}" for i, v in zip(vec.indices.tolist(), vec.values.tolist())
            )
            fh.write(f"{lab_part} {feat_part}".rstrip() + "\n")


@dataclass
class Dataset:
    """Immutable training corpus with a bidirectional relevance adjacency."""

    point_features: list[SparseVector]
    label_features: list[SparseVector]
    point_to_labels: list[np.ndarray]
    label_to_points: list[np.ndarray]
    num_points: int
    num_labels: int
    positive_sets: list[frozenset] = field(repr=False, default=None)

    def __post_init__(self):
        if self.positive_sets is None:
            self.positive_sets = [frozenset(row.tolist()) for row in self.point_to_labels]

    def is_positive(self, point: int, label: int) -> bool:
        return label in self.positive_sets[point]

    def positives(self, point: int) -> np.ndarray:
        return self.point_to_labels[point]


def build_dataset(points, labels, relevance) -> Dataset:
    """Assemble a Dataset and materialize the transpose adjacency.

    ``relevance`` maps each point id to an iterable of positive label ids.
    Duplicate label ids within a point are collapsed; dangling ids raise
    RangeError.
    """
    n = len(points)
    m = len(labels)
    if n == 0 or m == 0:
        raise RangeError("dataset needs at least one point and one label")
    dims = {v.dim for v in points} | {v.dim for v in labels}
    if len(dims) != 1:
        raise FormatError(f"point and label features must share one vocabulary, got dims {sorted(dims)}")

    point_to_labels: list[np.ndarray] = []
    transpose: list[list[int]] = [[] for _ in range(m)]
    if hasattr(relevance, "get"):
        rel_rows = [relevance.get(i, ()) for i in range(n)]
    else:
        if len(relevance) != n:
            raise RangeError(f"relevance has {len(relevance)} rows for {n} points")
        rel_rows = relevance
    for i, row in enumerate(rel_rows):
        ids = list(row)
        uniq = np.unique(np.asarray(ids, dtype=np.int64)) if ids else np.empty(0, dtype=np.int64)
        if uniq.size and (uniq[0] < 0 or uniq[-1] >= m):
            bad = uniq[0] if uniq[0] < 0 else uniq[-1]
            raise RangeError(f"point {i} references label {bad} outside [0, {m})")
        point_to_labels.append(uniq)
        for lab in uniq.tolist():
            transpose[lab].append(i)

    label_to_points = [np.asarray(ids, dtype=np.int64) for ids in transpose]
    return Dataset(list(points), list(labels), point_to_labels, label_to_points, n, m)


def load_dataset(point_path, label_path) -> Dataset:
    """Load the point file (features + relevance) and the label-feature file."""
    pf = parse_sparse_file(point_path)
    lf = parse_sparse_file(label_path)
    if lf.num_features != pf.num_features:
        raise FormatError(
            f"vocabulary mismatch: points declare {pf.num_features} features, labels {lf.num_features}"
        )
    if len(lf.rows) != pf.num_labels:
        raise FormatError(
            f"point file declares {pf.num_labels} labels but label file has {len(lf.rows)} rows"
        )
    return build_dataset(pf.rows, lf.rows, pf.labels)


@dataclass
class DatasetStats:
    """Relevance-count statistics that parameterize the retrieval bound.

    Variances are population variances over the full finite corpus, not
    sample estimates. When some label has no positive points the ratio
    moments are undefined and ``bound_usable`` is False.
    """

    labels_per_point: np.ndarray
    points_per_label: np.ndarray
    mean_labels_per_point: float
    mean_points_per_label: float
    min_labels_per_point: int
    min_points_per_label: int
    irrelevant_ratio_mean: float
    irrelevant_ratio_var: float
    labels_per_point_var: float
    bound_usable: bool


def compute_stats(dataset: Dataset) -> DatasetStats:
    n, m = dataset.num_points, dataset.num_labels
    p = np.array([row.size for row in dataset.point_to_labels], dtype=np.int64)
    q = np.array([row.size for row in dataset.label_to_points], dtype=np.int64)
    q_min = int(q.min())
    if q_min >= 1:
        ratio = (n - q) / q
        mu1 = float(ratio.mean())
        sigma1_sq = float(ratio.var())
        usable = True
    else:
        mu1 = math.nan
        sigma1_sq = math.nan
        usable = False
    return DatasetStats(
        labels_per_point=p,
        points_per_label=q,
        mean_labels_per_point=float(p.mean()),
        mean_points_per_label=float(q.mean()),
        min_labels_per_point=int(p.min()),
        min_points_per_label=q_min,
        irrelevant_ratio_mean=mu1,
        irrelevant_ratio_var=sigma1_sq,
        labels_per_point_var=float(p.var()),
        bound_usable=usable,
    )
