"""Two-stage training: Siamese encoder first, per-label classifiers second.

Stage one (``train_m1``) trains the encoder alone, standing in label
embeddings for classifiers. Batches are built by the configured mining
strategy; inside a batch every point gets one uniformly sampled positive
and its selected hard negatives, and the margin loss drives Adam updates on
the shared token table.

Stage two (``train_m2``) freezes the encoder, precomputes all point and
label embeddings once, initializes each classifier to its label embedding,
and refines the classifiers with the same loss. Classifier rows are
projected back to unit norm after every step, which keeps the residual
parameterization (classifier = label embedding + correction) recoverable
while staying compatible with inner-product retrieval.

Both stages are deterministic for a fixed seed and configuration when run
single-threaded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ann, encoder, negmine
from .clustering import Clustering, balanced_cluster
from .dataset import Dataset
from .errors import ConfigError, NumericsError
from .negmine import MinerConfig

__all__ = [
    "TrainConfig",
    "AdamState",
    "ClassifierBank",
    "EpochLog",
    "adam_step",
    "train_m1",
    "train_m2",
    "save_classifiers",
    "load_classifiers",
]

CLASSIFIER_MAGIC = b"XCCLSBNK"


@dataclass
class TrainConfig:
    miner: MinerConfig = field(default_factory=MinerConfig)
    gamma: float = 0.3
    epochs: int = 10
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    loss_kind: str = "hinge"
    seed: int = 0
    eval_sample: int = 256

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= beta < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {beta}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params))


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place on ``params``."""
    if params.shape != grads.shape:
        raise ConfigError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericsError("non-finite gradient")
    state.step += 1
    state.first_moment *= beta1
    state.first_moment += (1 - beta1) * grads
    state.second_moment *= beta2
    state.second_moment += (1 - beta2) * grads * grads
    m_hat = state.first_moment / (1 - beta1 ** state.step)
    v_hat = state.second_moment / (1 - beta2 ** state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


@dataclass
class EpochLog:
    epoch: int
    loss: float
    p_at_1: float
    seconds: float
    sampling_seconds: float


@dataclass
class ClassifierBank:
    """One unit-norm classifier row per label."""

    vectors: np.ndarray

    def residuals(self, label_embeddings: np.ndarray) -> np.ndarray:
        return self.vectors - label_embeddings


def _eligible_points(dataset: Dataset) -> np.ndarray:
    return np.array(
        [i for i in range(dataset.num_points) if dataset.point_to_labels[i].size], dtype=np.int64
    )


def _singleton_clustering(count: int) -> Clustering:
    members = [np.array([i], dtype=np.int64) for i in range(count)]
    return Clustering(np.arange(count, dtype=np.int64), count, members)


def _batch_pool(dataset: Dataset, batch_ids) -> np.ndarray:
    pools = [dataset.point_to_labels[i] for i in batch_ids]
    return np.unique(np.concatenate(pools)) if pools else np.empty(0, dtype=np.int64)


def _sample_positives(dataset: Dataset, batch_ids, rng) -> list[int]:
    picks = []
    for i in batch_ids:
        pos = dataset.point_to_labels[i]
        picks.append(int(pos[rng.integers(0, pos.size)]))
    return picks


def _effective_cluster_size(miner: MinerConfig, epoch: int) -> int:
    size = miner.cluster_size
    if miner.curriculum_enabled:
        size = negmine.curriculum_cluster_size(
            size, epoch, miner.curriculum_period, miner.curriculum_max_size
        )
    return min(size, miner.batch_size)


def _embedding_p_at_1(point_embs, label_embs, dataset, point_ids) -> float:
    scores = point_embs @ label_embs.T
    hits = sum(
        1 for row, i in enumerate(point_ids) if int(np.argmax(scores[row])) in dataset.positive_sets[i]
    )
    return hits / len(point_ids) if len(point_ids) else 0.0


def _eval_ids(eligible, sample, rng) -> np.ndarray:
    if sample and 0 < sample < eligible.size:
        return rng.choice(eligible, size=sample, replace=False)
    return eligible


def train_m1(dataset: Dataset, params: encoder.EncoderParams, config: TrainConfig):
    """Train the encoder; returns (trained params, per-epoch log).

    The input parameters are not mutated. Clustering is refreshed every
    ``refresh_interval`` epochs from current embeddings (strategy
    permitting) and reused as-is in between; in-batch hard negatives always
    use embeddings computed fresh for the batch. Points without positives
    are excluded from batches since they can contribute no loss term.
    """
    miner = config.miner
    eligible = _eligible_points(dataset)
    if eligible.size == 0:
        raise ConfigError("no data point has a positive label")

    params = encoder.EncoderParams(params.table.copy())
    state = AdamState.zeros_like(params.table)
    rng = np.random.default_rng(config.seed)
    eval_rng = np.random.default_rng([config.seed, 0xE7A1])
    eval_ids = _eval_ids(eligible, config.eval_sample, eval_rng)

    clustering = None
    global_negatives = None
    logs: list[EpochLog] = []
    for epoch in range(config.epochs):
        sampling_seconds = 0.0
        started = time.perf_counter()

        cluster_size = _effective_cluster_size(miner, epoch)
        if miner.strategy in ("uniform", "anns_refresh"):
            if clustering is None:
                clustering = _singleton_clustering(eligible.size)
        elif miner.strategy == "static_cluster":
            if clustering is None:
                tick = time.perf_counter()
                embs = encoder.embed_batch(params, [dataset.point_features[i] for i in eligible])
                clustering = balanced_cluster(embs, cluster_size, seed=int(rng.integers(2 ** 31)))
                sampling_seconds += time.perf_counter() - tick
        elif epoch % miner.refresh_interval == 0:
            tick = time.perf_counter()
            embs = encoder.embed_batch(params, [dataset.point_features[i] for i in eligible])
            clustering = balanced_cluster(embs, cluster_size, seed=int(rng.integers(2 ** 31)))
            sampling_seconds += time.perf_counter() - tick

        if miner.strategy == "anns_refresh" and epoch % miner.refresh_interval == 0:
            tick = time.perf_counter()
            point_embs = encoder.embed_batch(params, [dataset.point_features[i] for i in eligible])
            label_embs = encoder.embed_batch(params, dataset.label_features)
            # The baseline being emulated rebuilds a graph ANNS index over
            # the label embeddings; that construction cost is the point.
            index = ann.build_index(label_embs, mode="approximate")
            found = negmine.anns_refresh_negatives(
                point_embs,
                label_embs,
                [dataset.positive_sets[i] for i in eligible],
                miner.max_negatives,
                index=index,
            )
            global_negatives = dict(zip(eligible.tolist(), found))
            sampling_seconds += time.perf_counter() - tick

        plan = negmine.plan_epoch(clustering, miner.batch_size, seed=int(rng.integers(2 ** 31)))
        epoch_loss = 0.0
        for batch in plan:
            batch_ids = eligible[batch]
            positives = _sample_positives(dataset, batch_ids, rng)
            if miner.strategy == "anns_refresh":
                negatives = [global_negatives[int(i)] for i in batch_ids]
            else:
                pool = _batch_pool(dataset, batch_ids)
                point_embs = encoder.embed_batch(params, [dataset.point_features[i] for i in batch_ids])
                pool_embs = encoder.embed_batch(params, [dataset.label_features[l] for l in pool])
                radius = 2.0 if miner.strategy == "uniform" else miner.hardness_radius
                negatives = negmine.select_hard_negatives(
                    point_embs,
                    pool_embs,
                    pool,
                    [dataset.positive_sets[i] for i in batch_ids],
                    radius,
                    miner.max_negatives,
                )
            triples = [
                (
                    dataset.point_features[i],
                    dataset.label_features[positives[row]],
                    [dataset.label_features[int(l)] for l in negatives[row]],
                )
                for row, i in enumerate(batch_ids)
                if negatives[row].size
            ]
            if not triples:
                continue
            loss, grad = encoder.loss_and_grad(params, triples, config.gamma, config.loss_kind)
            adam_step(
                params.table, grad, state, config.learning_rate, config.beta1, config.beta2, config.eps_adam
            )
            epoch_loss += loss

        point_embs = encoder.embed_batch(params, [dataset.point_features[i] for i in eval_ids])
        label_embs = encoder.embed_batch(params, dataset.label_features)
        p_at_1 = _embedding_p_at_1(point_embs, label_embs, dataset, eval_ids.tolist())
        seconds = time.perf_counter() - started - sampling_seconds
        logs.append(EpochLog(epoch, epoch_loss, p_at_1, seconds, sampling_seconds))
    return params, logs


def train_m2(dataset: Dataset, params: encoder.EncoderParams, config: TrainConfig):
    """Refine per-label classifiers on a frozen encoder.

    Point and label embeddings are computed once. Classifiers start as the
    label embeddings (zero epochs returns exactly that) and are updated by
    Adam on the margin loss with in-batch hard negatives mined against the
    current classifier rows; clustering stays fixed because the point
    embeddings never move. Every touched row is re-projected to unit norm.
    """
    miner = config.miner
    eligible = _eligible_points(dataset)
    if eligible.size == 0:
        raise ConfigError("no data point has a positive label")

    point_embs = encoder.embed_batch(params, dataset.point_features)
    label_embs = encoder.embed_batch(params, dataset.label_features)
    bank = ClassifierBank(label_embs.copy())
    if config.epochs == 0:
        return bank, []

    weights = bank.vectors
    state = AdamState.zeros_like(weights)
    rng = np.random.default_rng(config.seed)
    eval_rng = np.random.default_rng([config.seed, 0xE7A2])
    eval_ids = _eval_ids(eligible, config.eval_sample, eval_rng)
    squared = config.loss_kind == "squared_hinge"

    clustering = balanced_cluster(
        point_embs[eligible], _effective_cluster_size(miner, 0), seed=int(rng.integers(2 ** 31))
    )
    logs: list[EpochLog] = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        plan = negmine.plan_epoch(clustering, miner.batch_size, seed=int(rng.integers(2 ** 31)))
        epoch_loss = 0.0
        for batch in plan:
            batch_ids = eligible[batch]
            positives = _sample_positives(dataset, batch_ids, rng)
            pool = _batch_pool(dataset, batch_ids)
            radius = 2.0 if miner.strategy == "uniform" else miner.hardness_radius
            negatives = negmine.select_hard_negatives(
                point_embs[batch_ids],
                weights[pool],
                pool,
                [dataset.positive_sets[i] for i in batch_ids],
                radius,
                miner.max_negatives,
            )
            grad = np.zeros_like(weights)
            touched = set()
            batch_loss = 0.0
            for row, i in enumerate(batch_ids):
                if not negatives[row].size:
                    continue
                x = point_embs[i]
                pos_label = positives[row]
                neg_ids = negatives[row]
                hinge = weights[neg_ids] @ x - float(weights[pos_label] @ x) + config.gamma
                active = hinge > 0
                if not np.any(active):
                    continue
                h = hinge[active]
                coeff = 2.0 * h if squared else np.ones_like(h)
                batch_loss += float(np.sum(h * h)) if squared else float(np.sum(h))
                for lab, c in zip(neg_ids[active], coeff):
                    grad[lab] += c * x
                    touched.add(int(lab))
                grad[pos_label] -= float(np.sum(coeff)) * x
                touched.add(pos_label)
            if not touched:
                continue
            adam_step(
                weights, grad, state, config.learning_rate, config.beta1, config.beta2, config.eps_adam
            )
            # Momentum moves previously-touched rows even on zero gradient,
            # so the unit-norm projection must cover every row.
            weights /= np.linalg.norm(weights, axis=1, keepdims=True)
            epoch_loss += batch_loss

        scores = point_embs[eval_ids] @ weights.T
        hits = sum(
            1
            for row, i in enumerate(eval_ids.tolist())
            if int(np.argmax(scores[row])) in dataset.positive_sets[i]
        )
        logs.append(
            EpochLog(epoch, epoch_loss, hits / eval_ids.size, time.perf_counter() - started, 0.0)
        )
    return bank, logs


def save_classifiers(path, bank: ClassifierBank):
    encoder.save_params(path, encoder.EncoderParams(bank.vectors), magic=CLASSIFIER_MAGIC)


def load_classifiers(path) -> ClassifierBank:
    return ClassifierBank(encoder.load_params(path, magic=CLASSIFIER_MAGIC).table)
