import numpy as np
import pytest

from xcmine import encoder
from xcmine.encoder import EncoderParams, embed_batch, init_params, loss_and_grad
from xcmine.errors import ConfigError, NumericsError
from xcmine.negmine import MinerConfig
from xcmine.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    load_classifiers,
    save_classifiers,
    train_m1,
    train_m2,
)

from conftest import toy_task


def miner(**overrides):
    base = dict(batch_size=20, cluster_size=4, refresh_interval=5, hardness_radius=1.5, max_negatives=5)
    base.update(overrides)
    return MinerConfig(**base)


def config(**overrides):
    base = dict(miner=miner(), gamma=0.3, epochs=10, learning_rate=0.01, seed=0, eval_sample=0)
    base.update(overrides)
    return TrainConfig(**base)


def embedding_p1(params, dataset):
    points = embed_batch(params, dataset.point_features)
    labels = embed_batch(params, dataset.label_features)
    scores = points @ labels.T
    return np.mean([int(np.argmax(scores[i])) in dataset.positive_sets[i] for i in range(dataset.num_points)])


class TestAdam:
    def test_zero_gradient_fresh_state(self):
        params = np.array([1.0, -2.0])
        state = AdamState.zeros_like(params)
        adam_step(params, np.zeros(2), state, lr=0.1)
        np.testing.assert_array_equal(params, [1.0, -2.0])

    def test_first_step_bias_corrections_cancel(self):
        params = np.array([0.0])
        state = AdamState.zeros_like(params)
        adam_step(params, np.array([1.0]), state, lr=0.001, eps=1e-8)
        assert params[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
        assert params[0] == pytest.approx(-0.000999999, abs=1e-8)

    def test_two_steps_match_hand_rolled_reference(self):
        lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 3.0
        params = np.array([0.5])
        state = AdamState.zeros_like(params)
        adam_step(params, np.array([g]), state, lr, b1, b2, eps)
        adam_step(params, np.array([g]), state, lr, b1, b2, eps)

        # Scalar reference computed step by step.
        p, m, v = 0.5, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        assert params[0] == pytest.approx(p, rel=1e-15)

    def test_non_finite_gradient_raises(self):
        params = np.zeros(2)
        state = AdamState.zeros_like(params)
        with pytest.raises(NumericsError):
            adam_step(params, np.array([np.nan, 0.0]), state, lr=0.1)

    def test_shape_mismatch(self):
        params = np.zeros(2)
        with pytest.raises(ConfigError):
            adam_step(params, np.zeros(3), AdamState.zeros_like(params), lr=0.1)


class TestTrainM1:
    def test_zero_epochs_returns_initial_params(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        trained, logs = train_m1(ds, params, config(epochs=0))
        np.testing.assert_array_equal(trained.table, params.table)
        assert logs == []

    def test_input_params_not_mutated(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        before = params.table.copy()
        train_m1(ds, params, config(epochs=3))
        np.testing.assert_array_equal(params.table, before)

    def test_toy_task_reaches_perfect_p1(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        trained, logs = train_m1(ds, params, config(epochs=50))
        assert embedding_p1(trained, ds) == 1.0
        assert any(log.p_at_1 == 1.0 for log in logs)

    def test_loss_finite_and_decreasing_on_average(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        _, logs = train_m1(ds, params, config(epochs=20))
        losses = [log.loss for log in logs]
        assert all(np.isfinite(l) for l in losses)
        assert np.mean(losses[-5:]) < losses[0]

    def test_deterministic_under_seed(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=3)
        a, _ = train_m1(ds, params, config(epochs=5, seed=11))
        b, _ = train_m1(ds, params, config(epochs=5, seed=11))
        assert a.table.tobytes() == b.table.tobytes()

    def test_requires_a_point_with_positives(self):
        from conftest import sparse
        from xcmine.dataset import build_dataset

        ds = build_dataset([sparse([(0, 1.0)], 4)], [sparse([(1, 1.0)], 4)], [[]])
        with pytest.raises(ConfigError):
            train_m1(ds, init_params(4, 4), config())

    def test_one_sampled_positive_per_point_per_batch(self, monkeypatch):
        ds = toy_task()
        seen = []
        original = loss_and_grad

        def spy(params, triples, gamma, loss_kind="hinge"):
            seen.extend(triples)
            return original(params, triples, gamma, loss_kind)

        monkeypatch.setattr("xcmine.trainer.encoder.loss_and_grad", spy)
        train_m1(ds, init_params(ds.point_features[0].dim, 8, seed=0), config(epochs=1))
        assert seen
        for anchor, positive, _ in seen:
            anchor_point = next(i for i, f in enumerate(ds.point_features) if f is anchor)
            label = next(l for l, f in enumerate(ds.label_features) if f is positive)
            assert label in ds.positive_sets[anchor_point]

    @pytest.mark.parametrize("strategy", ["uniform", "static_cluster", "anns_refresh"])
    def test_alternate_strategies_run_and_learn(self, strategy):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        trained, logs = train_m1(ds, params, config(epochs=25, miner=miner(strategy=strategy)))
        assert embedding_p1(trained, ds) >= 0.9
        assert all(np.isfinite(log.loss) for log in logs)

    def test_squared_hinge_descent_direction(self):
        # Loss decreases along the negative analytic gradient.
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=1)
        triples = [
            (ds.point_features[i], ds.label_features[i % 10], [ds.label_features[(i + 1) % 10]])
            for i in range(20)
        ]
        loss, grad = loss_and_grad(params, triples, 1.0, "squared_hinge")
        assert loss > 0
        stepped = EncoderParams(params.table - 1e-6 * grad)
        loss_after, _ = loss_and_grad(stepped, triples, 1.0, "squared_hinge")
        assert loss_after < loss


class TestTrainM2:
    def test_zero_epochs_initializes_to_label_embeddings(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        bank, logs = train_m2(ds, params, config(epochs=0))
        np.testing.assert_array_equal(bank.vectors, embed_batch(params, ds.label_features))
        assert logs == []

    def test_classifiers_unit_norm_after_training(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        bank, _ = train_m2(ds, params, config(epochs=15, learning_rate=0.02))
        norms = np.linalg.norm(bank.vectors, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_classifier_beats_embedding_p1(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        partially_trained, _ = train_m1(ds, params, config(epochs=2))
        emb_p1 = embedding_p1(partially_trained, ds)
        bank, _ = train_m2(ds, partially_trained, config(epochs=40, learning_rate=0.02))
        points = embed_batch(partially_trained, ds.point_features)
        scores = points @ bank.vectors.T
        clf_p1 = np.mean(
            [int(np.argmax(scores[i])) in ds.positive_sets[i] for i in range(ds.num_points)]
        )
        assert clf_p1 >= emb_p1

    def test_never_mutates_encoder(self, tmp_path):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        before = tmp_path / "before.bin"
        after = tmp_path / "after.bin"
        encoder.save_params(before, params)
        train_m2(ds, params, config(epochs=10))
        encoder.save_params(after, params)
        assert before.read_bytes() == after.read_bytes()

    def test_deterministic_under_seed(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=2)
        a, _ = train_m2(ds, params, config(epochs=5, seed=9))
        b, _ = train_m2(ds, params, config(epochs=5, seed=9))
        assert a.vectors.tobytes() == b.vectors.tobytes()

    def test_residuals_recoverable(self):
        ds = toy_task()
        params = init_params(ds.point_features[0].dim, 8, seed=0)
        bank, _ = train_m2(ds, params, config(epochs=5))
        label_embs = embed_batch(params, ds.label_features)
        np.testing.assert_allclose(label_embs + bank.residuals(label_embs), bank.vectors)


def test_classifier_checkpoint_roundtrip(tmp_path):
    ds = toy_task()
    params = init_params(ds.point_features[0].dim, 8, seed=0)
    bank, _ = train_m2(ds, params, config(epochs=3))
    path = tmp_path / "clf.bin"
    save_classifiers(path, bank)
    loaded = load_classifiers(path)
    np.testing.assert_array_equal(
        loaded.vectors, bank.vectors.astype(np.float32).astype(np.float64)
    )


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
