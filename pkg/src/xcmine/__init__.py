"""Extreme multi-label classification toolkit.

Pipeline: parse sparse XC-format data, train a Siamese encoder with
cluster-aware in-batch hard negatives (stage one), refine per-label
classifiers on frozen embeddings (stage two), serve predictions through a
maximum-inner-product index with regression-tree score fusion, evaluate
with the standard ranking metrics, and verify the negative-mining guarantee
exactly on small corpora.
"""

__version__ = "0.1.0"

from .dataset import Dataset, DatasetStats, SparseVector, build_dataset, compute_stats, load_dataset, parse_sparse_file
from .encoder import EncoderParams, embed, embed_batch, init_params, loss_and_grad
from .clustering import Clustering, balanced_cluster, clustering_goodness
from .negmine import MinerConfig, MiniBatchPlan, plan_epoch, select_hard_negatives

__all__ = [
    "Dataset",
    "DatasetStats",
    "SparseVector",
    "build_dataset",
    "compute_stats",
    "load_dataset",
    "parse_sparse_file",
    "EncoderParams",
    "embed",
    "embed_batch",
    "init_params",
    "loss_and_grad",
    "Clustering",
    "balanced_cluster",
    "clustering_goodness",
    "MinerConfig",
    "MiniBatchPlan",
    "plan_epoch",
    "select_hard_negatives",
    "__version__",
]
