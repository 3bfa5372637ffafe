"""Flat key=value run configuration.

A config file is plain text, one ``dotted.key = value`` per line, with
``#`` comments and blank lines ignored. Values are parsed as bool, int,
float, or string in that order. Unknown keys are rejected so typos fail
fast. All defaults are pre-filled below; a config file and command-line
flags only override them.
"""

from __future__ import annotations

from .errors import ConfigError
from .negmine import MinerConfig
from .synth import SynthSpec
from .trainer import TrainConfig

__all__ = [
    "default_config",
    "load_config",
    "parse_config_text",
    "miner_from_config",
    "train_config",
    "synth_spec_from_config",
]


def default_config() -> dict:
    return {
        "seed": 0,
        "threads": 1,
        "encoder.dim": 16,
        "train.margin": 0.3,
        "train.loss": "hinge",
        "train.m1.epochs": 50,
        "train.m1.learning_rate": 0.0001,
        "train.m2.epochs": 50,
        "train.m2.learning_rate": 0.001,
        "train.eval_sample": 256,
        "miner.batch_size": 64,
        "miner.cluster_size": 8,
        "miner.refresh_interval": 5,
        "miner.hardness_radius": 1.5,
        "miner.max_negatives": 5,
        "miner.strategy": "ngame",
        "miner.curriculum.enabled": False,
        "miner.curriculum.period": 25,
        "miner.curriculum.max_size": 64,
        "infer.shortlist_size": 100,
        "infer.fusion.max_depth": 7,
        "infer.fusion.min_leaf": 16,
        "infer.fusion.validation_fraction": 0.2,
        "metrics.propensity_a": 0.55,
        "metrics.propensity_b": 1.5,
        "synth.num_clusters": 8,
        "synth.points_per_cluster": 50,
        "synth.labels_per_cluster": 10,
        "synth.vocab_size": 1024,
        "synth.token_overlap": 1.0,
        "synth.noise_rate": 0.05,
        "synth.positives_per_point": 1,
        "synth.identity_weight": 2.0,
        "synth.decoys_per_point": 6,
        "synth.decoy_weight": 1.0,
    }


def _parse_value(raw: str):
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null"):
        return None
    for caster in (int, float):
        try:
            return caster(text)
        except ValueError:
            continue
    return text


def parse_config_text(text: str, path: str = "<config>") -> dict:
    config = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key not in config:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        config[key] = _parse_value(value)
    return config


def load_config(path=None) -> dict:
    if path is None:
        return default_config()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def miner_from_config(config: dict, strategy: str | None = None) -> MinerConfig:
    return MinerConfig(
        batch_size=int(config["miner.batch_size"]),
        cluster_size=int(config["miner.cluster_size"]),
        refresh_interval=int(config["miner.refresh_interval"]),
        hardness_radius=float(config["miner.hardness_radius"]),
        max_negatives=int(config["miner.max_negatives"]),
        strategy=strategy or str(config["miner.strategy"]),
        curriculum_enabled=bool(config["miner.curriculum.enabled"]),
        curriculum_period=int(config["miner.curriculum.period"]),
        curriculum_max_size=(
            None if config["miner.curriculum.max_size"] is None else int(config["miner.curriculum.max_size"])
        ),
    )


def synth_spec_from_config(config: dict) -> SynthSpec:
    return SynthSpec(
        num_clusters=int(config["synth.num_clusters"]),
        points_per_cluster=int(config["synth.points_per_cluster"]),
        labels_per_cluster=int(config["synth.labels_per_cluster"]),
        vocab_size=int(config["synth.vocab_size"]),
        dim=int(config["encoder.dim"]),
        token_overlap=float(config["synth.token_overlap"]),
        noise_rate=float(config["synth.noise_rate"]),
        seed=int(config["seed"]),
        positives_per_point=int(config["synth.positives_per_point"]),
        identity_weight=float(config["synth.identity_weight"]),
        decoys_per_point=int(config["synth.decoys_per_point"]),
        decoy_weight=float(config["synth.decoy_weight"]),
    )


def train_config(config: dict, stage: str, strategy: str | None = None) -> TrainConfig:
    if stage not in ("m1", "m2"):
        raise ConfigError(f"unknown training stage {stage!r}")
    return TrainConfig(
        miner=miner_from_config(config, strategy),
        gamma=float(config["train.margin"]),
        epochs=int(config[f"train.{stage}.epochs"]),
        learning_rate=float(config[f"train.{stage}.learning_rate"]),
        loss_kind=str(config["train.loss"]),
        seed=int(config["seed"]),
        eval_sample=int(config["train.eval_sample"]),
    )
