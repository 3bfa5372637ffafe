import numpy as np
import pytest

from xcmine.dataset import SparseVector, build_dataset


def unit_rows(rng, n, d):
    """Random unit-norm row vectors."""
    m = rng.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def sparse(entries, dim):
    return SparseVector.from_entries(entries, dim)


def random_sparse(rng, dim, max_nnz=4):
    nnz = int(rng.integers(1, max_nnz + 1))
    ids = rng.choice(dim, size=nnz, replace=False)
    vals = rng.uniform(0.25, 2.0, size=nnz)
    return SparseVector.from_entries(list(zip(ids.tolist(), vals.tolist())), dim)


def random_dataset(rng, num_points, num_labels, dim=16, min_positives=0, ensure_label_coverage=False):
    """Random corpus with random relevance; optionally every label gets a point."""
    points = [random_sparse(rng, dim) for _ in range(num_points)]
    labels = [random_sparse(rng, dim) for _ in range(num_labels)]
    relevance = []
    for _ in range(num_points):
        count = int(rng.integers(min_positives, max(min_positives + 1, 4)))
        relevance.append(rng.choice(num_labels, size=min(count, num_labels), replace=False).tolist())
    if ensure_label_coverage:
        for lab in range(num_labels):
            if not any(lab in row for row in relevance):
                relevance[int(rng.integers(0, num_points))].append(lab)
    return build_dataset(points, labels, relevance)


def toy_task(num_points=20, num_labels=10, noise_tokens=5, noise_weight=1.5):
    """Separable task: each point shares a unique token with its one positive
    label but carries a heavier per-point noise token, so an untrained
    encoder does poorly and training must learn to discount the noise."""
    vocab = num_labels + noise_tokens
    points, labels, rel = [], [], []
    for l in range(num_labels):
        labels.append(SparseVector.from_entries([(l, 1.0)], vocab))
    for i in range(num_points):
        l = i % num_labels
        entries = [(l, 1.0), (num_labels + i % noise_tokens, noise_weight)]
        points.append(SparseVector.from_entries(sorted(entries), vocab))
        rel.append([l])
    return build_dataset(points, labels, rel)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
