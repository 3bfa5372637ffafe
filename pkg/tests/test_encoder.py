import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcmine.dataset import SparseVector
from xcmine.encoder import (
    EncoderParams,
    embed,
    embed_batch,
    init_params,
    load_params,
    loss_and_grad,
    save_params,
)
from xcmine.errors import DegenerateInput, FormatError

from conftest import random_sparse, sparse


def table(rows):
    return EncoderParams(np.array(rows, dtype=np.float64))


class TestEmbed:
    def test_single_token_normalized(self):
        params = table([[3.0, 4.0]])
        np.testing.assert_allclose(embed(params, sparse([(0, 1.0)], 1)), [0.6, 0.8])

    def test_two_token_symmetry(self):
        params = table([[1.0, 0.0], [0.0, 1.0]])
        out = embed(params, sparse([(0, 1.0), (1, 1.0)], 2))
        np.testing.assert_allclose(out, [1 / np.sqrt(2), 1 / np.sqrt(2)])

    def test_empty_input_degenerate(self):
        with pytest.raises(DegenerateInput):
            embed(table([[1.0, 0.0]]), sparse([], 1))

    def test_zero_sum_degenerate(self):
        params = table([[1.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(DegenerateInput):
            embed(params, sparse([(0, 1.0), (1, 1.0)], 2))

    def test_scale_invariance(self, rng):
        params = init_params(12, 6, seed=3)
        x = random_sparse(rng, 12)
        scaled = SparseVector(x.indices, x.values * 7.5, x.dim)
        np.testing.assert_allclose(embed(params, x), embed(params, scaled), atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_unit_norm(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params(10, 4, seed=seed)
        x = random_sparse(rng, 10)
        assert abs(np.linalg.norm(embed(params, x)) - 1.0) <= 1e-6


class TestEmbedBatch:
    def test_batch_of_one(self, rng):
        params = init_params(10, 4, seed=0)
        x = random_sparse(rng, 10)
        np.testing.assert_array_equal(embed_batch(params, [x])[0], embed(params, x))

    def test_matches_individual_calls(self, rng):
        params = init_params(20, 5, seed=1)
        xs = [random_sparse(rng, 20) for _ in range(64)]
        batch = embed_batch(params, xs)
        for i, x in enumerate(xs):
            np.testing.assert_array_equal(batch[i], embed(params, x))

    def test_order_preserving(self, rng):
        params = init_params(20, 5, seed=1)
        xs = [random_sparse(rng, 20) for _ in range(8)]
        perm = rng.permutation(8)
        batch = embed_batch(params, xs)
        shuffled = embed_batch(params, [xs[i] for i in perm])
        np.testing.assert_array_equal(shuffled, batch[perm])

    def test_reports_offending_index(self):
        params = table([[1.0, 0.0]])
        with pytest.raises(DegenerateInput, match="input 1"):
            embed_batch(params, [sparse([(0, 1.0)], 1), sparse([], 1)])


def triple_with_scores(s_pos, s_neg):
    """Tokens chosen so anchor/positive/negative dots are exactly s_pos, s_neg."""
    rows = [
        [1.0, 0.0],
        [s_pos, np.sqrt(1 - s_pos ** 2)],
        [s_neg, np.sqrt(1 - s_neg ** 2)],
    ]
    anchor, pos, neg = (sparse([(i, 1.0)], 3) for i in range(3))
    return table(rows), [(anchor, pos, [neg])]


class TestLoss:
    def test_inactive_hinge(self):
        params, triples = triple_with_scores(0.9, 0.5)
        loss, grad = loss_and_grad(params, triples, gamma=0.3)
        assert loss == 0.0
        assert not grad.any()

    def test_active_hinge_value(self):
        params, triples = triple_with_scores(0.6, 0.5)
        loss, _ = loss_and_grad(params, triples, gamma=0.3)
        assert loss == pytest.approx(0.2, rel=1e-12)

    def test_squared_hinge_value(self):
        params, triples = triple_with_scores(0.6, 0.5)
        loss, _ = loss_and_grad(params, triples, gamma=0.3, loss_kind="squared_hinge")
        assert loss == pytest.approx(0.04, rel=1e-12)

    def test_hinge_nonnegative_and_zero_iff_margins_met(self, rng):
        params = init_params(10, 4, seed=7)
        for _ in range(20):
            triples = [
                (random_sparse(rng, 10), random_sparse(rng, 10), [random_sparse(rng, 10) for _ in range(2)])
            ]
            loss, _ = loss_and_grad(params, triples, gamma=0.2)
            assert loss >= 0.0
            a, p, ns = triples[0]
            margins_met = all(
                float(embed(params, n) @ embed(params, a)) - float(embed(params, p) @ embed(params, a)) + 0.2 <= 0
                for n in ns
            )
            assert (loss == 0.0) == margins_met

    def test_empty_negative_sets_contribute_nothing(self, rng):
        params = init_params(10, 4, seed=7)
        triples = [(random_sparse(rng, 10), random_sparse(rng, 10), [])]
        loss, grad = loss_and_grad(params, triples, gamma=0.3)
        assert loss == 0.0 and not grad.any()


def finite_difference_grad(params, triples, gamma, h=1e-5):
    """Central differences on the squared-hinge loss, entry by entry."""
    base = params.table
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            for sign in (+1, -1):
                bumped = base.copy()
                bumped[i, j] += sign * h
                val, _ = loss_and_grad(EncoderParams(bumped), triples, gamma, "squared_hinge")
                grad[i, j] += sign * val
            grad[i, j] /= 2 * h
    return grad


def gradient_check_case(seed, vocab=6, dim=4, num_anchors=2, gamma=0.3):
    rng = np.random.default_rng(seed)
    params = init_params(vocab, dim, seed=seed)
    triples = []
    for _ in range(num_anchors):
        triples.append(
            (random_sparse(rng, vocab), random_sparse(rng, vocab), [random_sparse(rng, vocab) for _ in range(2)])
        )
    return params, triples, gamma


def hinge_margins(params, triples, gamma):
    out = []
    for a, p, ns in triples:
        e_a, e_p = embed(params, a), embed(params, p)
        for n in ns:
            out.append(float(embed(params, n) @ e_a) - float(e_a @ e_p) + gamma)
    return out


def test_gradient_matches_finite_differences():
    checked = 0
    seed = 0
    while checked < 10:
        seed += 1
        params, triples, gamma = gradient_check_case(seed)
        # Stay away from the hinge kink where central differences straddle
        # the piecewise boundary.
        if min(abs(m) for m in hinge_margins(params, triples, gamma)) < 1e-2:
            continue
        _, analytic = loss_and_grad(params, triples, gamma, "squared_hinge")
        numeric = finite_difference_grad(params, triples, gamma)
        scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
        rel = np.abs(analytic - numeric).max() / scale
        assert rel <= 1e-4, f"seed {seed}: relative error {rel}"
        checked += 1


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = init_params(7, 3, seed=2)
        path = tmp_path / "enc.bin"
        save_params(path, params)
        loaded = load_params(path)
        np.testing.assert_array_equal(loaded.table, params.table.astype(np.float32).astype(np.float64))

    def test_bad_magic(self, tmp_path):
        params = init_params(4, 3, seed=2)
        path = tmp_path / "enc.bin"
        save_params(path, params, magic=b"XXXXXXXX")
        with pytest.raises(FormatError):
            load_params(path)

    def test_truncated_file(self, tmp_path):
        params = init_params(4, 3, seed=2)
        path = tmp_path / "enc.bin"
        save_params(path, params)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_params(path)
