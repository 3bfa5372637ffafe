"""Maximum-inner-product retrieval over unit-norm vectors.

On the unit sphere, inner product, cosine, and Euclidean nearest-neighbor
orderings coincide, so one index serves both classifier-score retrieval and
radius-style distance queries. The exact index is the ground truth used by
tests; the approximate index is a single-layer navigable-small-world graph
whose recall against the exact index is measured, never assumed.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NormError

__all__ = ["MipsIndex", "build_index", "query", "save_index", "load_index"]

UNIT_NORM_TOL = 1e-4
AUTO_EXACT_LIMIT = 50_000
DEFAULT_DEGREE = 16
DEFAULT_EF_SEARCH = 128
DEFAULT_EF_CONSTRUCTION = 100


@dataclass
class MipsIndex:
    vectors: np.ndarray
    ids: np.ndarray
    mode: str
    degree: int = DEFAULT_DEGREE
    ef_search: int = DEFAULT_EF_SEARCH
    graph: list = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def build_index(
    vectors,
    mode: str | None = None,
    ids=None,
    degree: int = DEFAULT_DEGREE,
    ef_construction: int = DEFAULT_EF_CONSTRUCTION,
    ef_search: int = DEFAULT_EF_SEARCH,
) -> MipsIndex:
    """Build an immutable index; mode defaults to exact below 50k vectors."""
    data = np.ascontiguousarray(vectors, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ConfigError("index needs a non-empty 2-d vector array")
    norms = np.linalg.norm(data, axis=1)
    off = np.abs(norms - 1.0)
    if np.any(off > UNIT_NORM_TOL):
        worst = int(np.argmax(off))
        raise NormError(f"vector {worst} has norm {norms[worst]:.6f}, expected 1 within {UNIT_NORM_TOL}")
    if ids is None:
        ids = np.arange(data.shape[0], dtype=np.int64)
    else:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[0] != data.shape[0]:
            raise ConfigError("id map length must match vector count")
    if mode is None:
        mode = "exact" if data.shape[0] <= AUTO_EXACT_LIMIT else "approximate"
    if mode == "exact":
        return MipsIndex(data, ids, "exact")
    if mode == "approximate":
        graph = _build_graph(data, degree, ef_construction)
        return MipsIndex(data, ids, "approximate", degree, ef_search, graph)
    raise ConfigError(f"unknown index mode {mode!r}")


def query(index: MipsIndex, q, k: int, ef: int | None = None):
    """Top-k (id, score) pairs by inner product, scores non-increasing.

    Ties break toward the smaller id. Asking for more results than stored
    vectors returns them all.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    vec = np.asarray(q, dtype=np.float64)
    k = min(k, len(index))
    if index.mode == "exact":
        scores = index.vectors @ vec
        order = np.lexsort((index.ids, -scores))[:k]
        return [(int(index.ids[i]), float(scores[i])) for i in order]
    ef = max(ef or index.ef_search, k)
    found = _graph_search(index.vectors, index.graph, vec, ef, entry=0)
    found.sort(key=lambda pair: (-pair[1], index.ids[pair[0]]))
    return [(int(index.ids[i]), float(s)) for i, s in found[:k]]


def _build_graph(data, degree, ef_construction):
    n = data.shape[0]
    graph = [[] for _ in range(n)]
    for node in range(1, n):
        cand = _graph_search(data, graph, data[node], max(ef_construction, degree), entry=0, limit=node)
        cand.sort(key=lambda pair: (-pair[1], pair[0]))
        neighbors = [i for i, _ in cand[:degree]]
        graph[node] = neighbors
        for other in neighbors:
            graph[other].append(node)
            if len(graph[other]) > degree:
                scores = data[graph[other]] @ data[other]
                keep = sorted(
                    range(len(scores)), key=lambda j: (-scores[j], graph[other][j])
                )[:degree]
                graph[other] = [graph[other][j] for j in keep]
    return graph


def _graph_search(data, graph, q, ef, entry=0, limit=None):
    """Best-first beam search; returns up to ef (node, score) pairs."""
    if limit is not None and entry >= limit:
        return []
    start_score = float(data[entry] @ q)
    visited = {entry}
    candidates = [(-start_score, entry)]
    results = [(start_score, entry)]
    while candidates:
        neg_score, node = heapq.heappop(candidates)
        if len(results) >= ef and -neg_score < results[0][0]:
            break
        for nb in graph[node]:
            if nb in visited or (limit is not None and nb >= limit):
                continue
            visited.add(nb)
            score = float(data[nb] @ q)
            if len(results) < ef or score > results[0][0]:
                heapq.heappush(candidates, (-score, nb))
                heapq.heappush(results, (score, nb))
                if len(results) > ef:
                    heapq.heappop(results)
    return [(node, score) for score, node in results]


def save_index(path, index: MipsIndex):
    """Dump stored vectors in the shared binary matrix format."""
    from . import encoder

    encoder.save_params(path, encoder.EncoderParams(index.vectors), magic=b"XCMINMIP")


def load_index(path, mode: str = "exact", **kwargs) -> MipsIndex:
    from . import encoder

    params = encoder.load_params(path, magic=b"XCMINMIP")
    return build_index(params.table, mode=mode, **kwargs)
