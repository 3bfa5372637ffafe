import numpy as np
import pytest

from xcmine.clustering import balanced_cluster
from xcmine.dataset import build_dataset, compute_stats
from xcmine.encoder import embed_batch, init_params
from xcmine.errors import DegenerateInput
from xcmine.negmine import MinerConfig
from xcmine.synth import SynthSpec, generate
from xcmine.theory import (
    bad_event_rate,
    bound_constants,
    embedding_goodness,
    full_coverage_retrieval,
    verify_bound,
)

from conftest import random_dataset, sparse, unit_rows


def miner(cluster_size, batch_size=None):
    return MinerConfig(
        batch_size=batch_size or max(cluster_size, 64),
        cluster_size=cluster_size,
        hardness_radius=1.0,
    )


def uniform_relevance_dataset(num_points, num_labels, positives_per_point):
    """Every point gets the same number of positives, labels covered evenly."""
    points = [sparse([(0, 1.0)], 4) for _ in range(num_points)]
    labels = [sparse([(1, 1.0)], 4) for _ in range(num_labels)]
    rel = [
        [(i * positives_per_point + j) % num_labels for j in range(positives_per_point)]
        for i in range(num_points)
    ]
    return build_dataset(points, labels, rel)


class TestEmbeddingGoodness:
    def test_coincident_pairs_are_never_far(self, rng):
        ds = random_dataset(rng, 10, 6, min_positives=1)
        shared = unit_rows(rng, 1, 5)[0]
        point_embs = np.tile(shared, (10, 1))
        label_embs = np.tile(shared, (6, 1))
        for radius in (0.01, 0.5, 2.0):
            assert embedding_goodness(ds, point_embs, label_embs, radius) == 0.0

    def test_half_far(self):
        ds = uniform_relevance_dataset(2, 2, 1)
        point_embs = np.array([[1.0, 0.0], [1.0, 0.0]])
        # First pair at distance 0, second at distance 0.6.
        dot = 1.0 - 0.6 ** 2 / 2.0
        label_embs = np.array([[1.0, 0.0], [dot, np.sqrt(1 - dot ** 2)]])
        assert embedding_goodness(ds, point_embs, label_embs, 0.5) == 0.5

    def test_matches_double_loop_oracle(self, rng):
        ds = random_dataset(rng, 25, 12, min_positives=1)
        point_embs = unit_rows(rng, 25, 6)
        label_embs = unit_rows(rng, 12, 6)
        for radius in (0.4, 0.9, 1.5):
            far = total = 0
            for i in range(25):
                for l in ds.point_to_labels[i].tolist():
                    total += 1
                    if 2.0 - 2.0 * float(point_embs[i] @ label_embs[l]) > radius * radius:
                        far += 1
            assert embedding_goodness(ds, point_embs, label_embs, radius) == far / total

    def test_no_positive_pairs_degenerate(self):
        ds = build_dataset([sparse([(0, 1.0)], 4)], [sparse([(1, 1.0)], 4)], [[]])
        with pytest.raises(DegenerateInput):
            embedding_goodness(ds, np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), 0.5)

    def test_monotone_non_increasing_in_radius(self, rng):
        ds = random_dataset(rng, 30, 10, min_positives=1)
        point_embs = unit_rows(rng, 30, 6)
        label_embs = unit_rows(rng, 10, 6)
        vals = [embedding_goodness(ds, point_embs, label_embs, r) for r in np.linspace(0.05, 2.0, 10)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestBoundConstants:
    def test_balanced_hand_computation(self):
        # 10 points with one positive each, 5 labels with two points each.
        ds = uniform_relevance_dataset(10, 5, 1)
        stats = compute_stats(ds)
        c_embed, c_cluster = bound_constants(stats, 10, 5)
        assert c_embed == pytest.approx(0.8)
        assert c_cluster == pytest.approx(1.0)

    def test_corollary_reduction(self):
        # Balanced: both coefficients at most 1, the cluster one exactly 1.
        for n, l, p in ((20, 10, 1), (24, 8, 2), (30, 15, 3)):
            ds = uniform_relevance_dataset(n, l, p)
            stats = compute_stats(ds)
            assert stats.irrelevant_ratio_var == 0.0
            assert stats.labels_per_point_var == 0.0
            c_embed, c_cluster = bound_constants(stats, n, l)
            assert c_embed <= 1.0
            assert c_cluster == pytest.approx(1.0, rel=1e-15)

    def test_uncovered_label_rejected(self):
        ds = build_dataset(
            [sparse([(0, 1.0)], 4)], [sparse([(1, 1.0)], 4), sparse([(2, 1.0)], 4)], [[0]]
        )
        with pytest.raises(DegenerateInput):
            bound_constants(compute_stats(ds), 1, 2)


class TestBadEventRate:
    def test_single_cluster_rate_zero_with_covered_labels(self, rng):
        ds = random_dataset(rng, 20, 8, min_positives=1, ensure_label_coverage=True)
        point_embs = unit_rows(rng, 20, 6)
        label_embs = unit_rows(rng, 8, 6)
        clustering = balanced_cluster(point_embs, 20, seed=0)
        retrieved = full_coverage_retrieval(ds, point_embs, label_embs, clustering, 1.2)
        assert bad_event_rate(ds, point_embs, label_embs, retrieved, 1.2) == 0.0

    def test_zero_radius_rate_zero(self, rng):
        ds = random_dataset(rng, 10, 5, min_positives=1, ensure_label_coverage=True)
        point_embs = unit_rows(rng, 10, 6)
        label_embs = unit_rows(rng, 5, 6)
        clustering = balanced_cluster(point_embs, 2, seed=0)
        retrieved = full_coverage_retrieval(ds, point_embs, label_embs, clustering, 0.0)
        assert bad_event_rate(ds, point_embs, label_embs, retrieved, 0.0) == 0.0

    def test_matches_triple_loop_oracle(self, rng):
        ds = random_dataset(rng, 18, 9, min_positives=1, ensure_label_coverage=True)
        point_embs = unit_rows(rng, 18, 5)
        label_embs = unit_rows(rng, 9, 5)
        clustering = balanced_cluster(point_embs, 4, seed=1)
        for radius in (0.6, 1.0, 1.4):
            retrieved = full_coverage_retrieval(ds, point_embs, label_embs, clustering, radius)
            got = bad_event_rate(ds, point_embs, label_embs, retrieved, radius)
            missed = 0
            for i in range(18):
                kept = set(retrieved[i].tolist())
                for l in range(9):
                    if l in ds.positive_sets[i]:
                        continue
                    close = 2.0 - 2.0 * float(point_embs[i] @ label_embs[l]) <= radius * radius
                    if close and l not in kept:
                        missed += 1
            assert got == missed / (18 * 9)


class TestVerifyBound:
    def test_holds_on_random_instances(self, rng):
        for seed in range(20):
            local = np.random.default_rng(seed)
            ds = random_dataset(local, 40, 20, min_positives=1, ensure_label_coverage=True)
            params = init_params(16, 8, seed=seed)
            report = verify_bound(ds, params, miner(cluster_size=int(local.integers(2, 15))), radius=float(local.choice([0.3, 0.6, 1.0])), seed=seed)
            assert report.holds, f"seed {seed}: {report}"

    def test_single_cluster_reduces_to_embedding_term(self, rng):
        ds = random_dataset(rng, 30, 12, min_positives=1, ensure_label_coverage=True)
        params = init_params(16, 8, seed=4)
        report = verify_bound(ds, params, miner(cluster_size=30), radius=0.8)
        assert report.split_pair_frac == 0.0
        assert report.bound == pytest.approx(report.embed_coeff * report.far_positive_frac)
        assert report.holds

    def test_balanced_instance_matches_corollary(self):
        spec = SynthSpec(
            num_clusters=4,
            points_per_cluster=10,
            labels_per_cluster=5,
            vocab_size=128,
            dim=8,
            seed=7,
        )
        generated = generate(spec)
        params = init_params(128, 8, seed=7)
        report = verify_bound(generated.dataset, params, miner(cluster_size=10), radius=0.6)
        assert report.holds
        assert report.far_positive_frac == 0.0
        assert report.cluster_coeff == pytest.approx(1.0, rel=1e-15)
        want = report.far_positive_frac + report.split_pair_frac
        assert report.bound == pytest.approx(want, rel=1e-12)

    def test_report_text_contains_verdict(self, rng):
        ds = random_dataset(rng, 12, 6, min_positives=1, ensure_label_coverage=True)
        params = init_params(16, 8, seed=0)
        report = verify_bound(ds, params, miner(cluster_size=3), radius=0.6)
        text = report.as_text()
        assert "holds =" in text and "bound =" in text
