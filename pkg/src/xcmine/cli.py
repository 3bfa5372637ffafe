"""Command-line driver for the full pipeline.

Subcommands: ``stats``, ``synth``, ``train``, ``predict``, ``evaluate``,
``verify-bound``, and ``compare-miners``. Every run that writes outputs
also writes a ``manifest.json`` (command, full config snapshot, seed,
package and numpy versions) sufficient to reproduce the run bit for bit in
single-threaded mode. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 failed bound verification. Set ``NGAME_LOG`` to a logging level
name for more verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, ann, encoder, infer, metrics, negmine, synth, theory, trainer
from .config import default_config, load_config, miner_from_config, train_config
from .dataset import compute_stats, load_dataset, parse_sparse_file, write_sparse_file
from .errors import (
    ConfigError,
    DegenerateInput,
    FormatError,
    NormError,
    NumericsError,
    RangeError,
)

__all__ = ["main"]

logger = logging.getLogger("xcmine")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BOUND = 4

ENCODER_FILE = "encoder.bin"
CLASSIFIER_FILE = "classifiers.bin"
FUSION_FILE = "fusion.bin"
FREQS_FILE = "label_freqs.txt"


def _setup_logging():
    level = os.environ.get("NGAME_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: dict, extra: dict | None = None):
    payload = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "versions": {"xcmine": __version__, "numpy": np.__version__},
    }
    if extra:
        payload.update(extra)
    (out / "manifest.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _load_cfg(args) -> dict:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    return cfg


def _stats_lines(ds, stats) -> list[str]:
    fields = [
        ("num_points", ds.num_points),
        ("num_labels", ds.num_labels),
        ("mean_labels_per_point", stats.mean_labels_per_point),
        ("mean_points_per_label", stats.mean_points_per_label),
        ("min_labels_per_point", stats.min_labels_per_point),
        ("min_points_per_label", stats.min_points_per_label),
        ("irrelevant_ratio_mean", stats.irrelevant_ratio_mean),
        ("irrelevant_ratio_var", stats.irrelevant_ratio_var),
        ("labels_per_point_var", stats.labels_per_point_var),
        ("bound_usable", str(stats.bound_usable).lower()),
    ]
    return [f"{key} = {value}" for key, value in fields]


def cmd_stats(args) -> int:
    cfg = _load_cfg(args)
    ds = load_dataset(args.data_points, args.data_labels)
    stats = compute_stats(ds)
    text = "\n".join(_stats_lines(ds, stats))
    print(text)
    if args.out:
        out = _out_dir(args)
        (out / "stats.txt").write_text(text + "\n", encoding="utf-8")
        _write_manifest(out, "stats", cfg)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    spec = synth.SynthSpec(
        num_clusters=int(cfg["synth.num_clusters"]),
        points_per_cluster=int(cfg["synth.points_per_cluster"]),
        labels_per_cluster=int(cfg["synth.labels_per_cluster"]),
        vocab_size=int(cfg["synth.vocab_size"]),
        dim=int(cfg["encoder.dim"]),
        token_overlap=float(cfg["synth.token_overlap"]),
        noise_rate=float(cfg["synth.noise_rate"]),
        seed=int(cfg["seed"]),
        positives_per_point=int(cfg["synth.positives_per_point"]),
        identity_weight=float(cfg["synth.identity_weight"]),
    )
    generated = synth.generate(spec)
    ds = generated.dataset
    out = _out_dir(args)
    dim = ds.point_features[0].dim
    write_sparse_file(
        out / "points.txt",
        ds.point_features,
        [row.tolist() for row in ds.point_to_labels],
        dim,
        ds.num_labels,
    )
    write_sparse_file(out / "labels.txt", ds.label_features, [[] for _ in range(ds.num_labels)], dim, ds.num_labels)
    (out / "planted_clusters.txt").write_text(
        "".join(f"{i} {c}\n" for i, c in enumerate(generated.point_clusters.tolist())), encoding="utf-8"
    )
    _write_manifest(out, "synth", cfg, {"num_points": ds.num_points, "num_labels": ds.num_labels})
    print(f"wrote {ds.num_points} points, {ds.num_labels} labels to {out}")
    return EXIT_OK


def _write_log_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "epoch", "loss", "p_at_1", "seconds", "sampling_seconds"])
        writer.writerows(rows)


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    ds = load_dataset(args.data_points, args.data_labels)
    out = _out_dir(args)
    vocab = ds.point_features[0].dim
    params = encoder.init_params(vocab, int(cfg["encoder.dim"]), seed=int(cfg["seed"]))

    params, m1_logs = trainer.train_m1(ds, params, train_config(cfg, "m1"))
    encoder.save_params(out / ENCODER_FILE, params)
    bank, m2_logs = trainer.train_m2(ds, params, train_config(cfg, "m2"))
    trainer.save_classifiers(out / CLASSIFIER_FILE, bank)

    freqs = np.array([p.size for p in ds.label_to_points], dtype=np.int64)
    (out / FREQS_FILE).write_text("".join(f"{f}\n" for f in freqs.tolist()), encoding="utf-8")

    label_embs = encoder.embed_batch(params, ds.label_features)
    index = ann.build_index(bank.vectors)
    rng = np.random.default_rng([int(cfg["seed"]), 0xF051])
    eligible = [i for i in range(ds.num_points) if ds.point_to_labels[i].size]
    val_count = max(1, int(round(float(cfg["infer.fusion.validation_fraction"]) * len(eligible))))
    val_ids = rng.choice(eligible, size=min(val_count, len(eligible)), replace=False).tolist()
    descriptors, targets = infer.build_fusion_training_set(
        ds, val_ids, params, bank.vectors, label_embs, index, int(cfg["infer.shortlist_size"]), freqs
    )
    tree = infer.fit_tree(
        descriptors, targets, int(cfg["infer.fusion.max_depth"]), int(cfg["infer.fusion.min_leaf"])
    )
    infer.save_fusion(out / FUSION_FILE, tree)

    rows = [("m1", l.epoch, l.loss, l.p_at_1, l.seconds, l.sampling_seconds) for l in m1_logs]
    rows += [("m2", l.epoch, l.loss, l.p_at_1, l.seconds, l.sampling_seconds) for l in m2_logs]
    _write_log_csv(out / "train_log.csv", rows)
    _write_manifest(out, "train", cfg, {"vocab_size": vocab})
    final_p1 = m2_logs[-1].p_at_1 if m2_logs else (m1_logs[-1].p_at_1 if m1_logs else float("nan"))
    print(f"trained encoder + classifiers + fusion -> {out} (last logged P@1 {final_p1:.3f})")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_cfg(args)
    model = Path(args.model)
    params = encoder.load_params(model / ENCODER_FILE)
    bank = trainer.load_classifiers(model / CLASSIFIER_FILE)
    fusion_path = model / FUSION_FILE
    fusion = infer.load_fusion(fusion_path) if fusion_path.exists() else None
    freqs = np.array(
        [int(line) for line in (model / FREQS_FILE).read_text(encoding="utf-8").split()], dtype=np.float64
    )
    labels = parse_sparse_file(args.data_labels)
    label_embs = encoder.embed_batch(params, labels.rows)
    test = parse_sparse_file(args.data_points)
    index = ann.build_index(bank.vectors)

    out = _out_dir(args)
    with open(out / "predictions.tsv", "w", encoding="utf-8") as fh:
        for i, features in enumerate(test.rows):
            ranked = infer.predict(
                features,
                params,
                bank.vectors,
                label_embs,
                freqs,
                fusion,
                index,
                k=args.k,
                shortlist_size=int(cfg["infer.shortlist_size"]),
            )
            cell = ",".join(f"{label}:{score:.6g}" for label, score in ranked)
            fh.write(f"{i}\t{cell}\n")
    _write_manifest(out, "predict", cfg, {"k": args.k, "num_queries": len(test.rows)})
    print(f"wrote predictions for {len(test.rows)} points -> {out / 'predictions.tsv'}")
    return EXIT_OK


def _read_predictions(path) -> dict[int, list[int]]:
    ranked = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            point_part, _, cell = line.partition("\t")
            labels = []
            if cell:
                for tok in cell.split(","):
                    labels.append(int(tok.split(":", 1)[0]))
            ranked[int(point_part)] = labels
    return ranked


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    test = parse_sparse_file(args.data_points)
    ranked = _read_predictions(args.pred)
    try:
        ks = [int(tok) for tok in str(args.k).split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --k value {args.k!r}: {exc}") from exc

    freq_source = args.train_points or args.data_points
    source = parse_sparse_file(freq_source)
    if source.num_labels != test.num_labels:
        raise FormatError(
            f"label spaces differ: {freq_source} has {source.num_labels}, test has {test.num_labels}"
        )
    freqs = np.zeros(source.num_labels, dtype=np.int64)
    for labs in source.labels:
        freqs[labs] += 1
    model = metrics.propensities(
        freqs, max(len(source.rows), 3), float(cfg["metrics.propensity_a"]), float(cfg["metrics.propensity_b"])
    )

    pred_lists = [ranked.get(i, []) for i in range(len(test.rows))]
    rel_sets = [set(labs) for labs in test.labels]
    lines = []
    for k in ks:
        for name, fn in (
            ("P", lambda p, r, k=k: metrics.precision_at_k(p, r, k)),
            ("N", lambda p, r, k=k: metrics.ndcg_at_k(p, r, k)),
            ("R", lambda p, r, k=k: metrics.recall_at_k(p, r, k)),
            ("PSP", lambda p, r, k=k: metrics.psp_at_k(p, r, model, k)),
            ("PSN", lambda p, r, k=k: metrics.psn_at_k(p, r, model, k)),
        ):
            value = metrics.mean_metric(fn, pred_lists, rel_sets)
            lines.append(f"{name}@{k} = {value:.6f}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        out = _out_dir(args)
        (out / "metrics.txt").write_text(text + "\n", encoding="utf-8")
        if args.per_point:
            with open(out / "per_point.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["point_id"] + [f"P@{k}" for k in ks])
                for i, (preds, rel) in enumerate(zip(pred_lists, rel_sets)):
                    if not rel:
                        continue
                    writer.writerow([i] + [metrics.precision_at_k(preds, rel, k) for k in ks])
        _write_manifest(out, "evaluate", cfg)
    return EXIT_OK


def cmd_verify_bound(args) -> int:
    cfg = _load_cfg(args)
    ds = load_dataset(args.data_points, args.data_labels)
    params = encoder.init_params(ds.point_features[0].dim, int(cfg["encoder.dim"]), seed=int(cfg["seed"]))
    if args.model:
        params = encoder.load_params(Path(args.model) / ENCODER_FILE)
    report = theory.verify_bound(ds, params, miner_from_config(cfg), args.radius, seed=int(cfg["seed"]))
    print(report.as_text())
    if args.out:
        out = _out_dir(args)
        (out / "bound_report.txt").write_text(report.as_text() + "\n", encoding="utf-8")
        _write_manifest(out, "verify-bound", cfg, {"radius": args.radius})
    return EXIT_OK if report.holds else EXIT_BOUND


def run_miner_comparison(ds, cfg: dict, strategies) -> tuple[list, list]:
    """Train one encoder per strategy; per-epoch rows plus overhead summaries."""
    rows = []
    summaries = []
    per_strategy = {}
    for strategy in strategies:
        if strategy not in negmine.STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r} (choose from {negmine.STRATEGIES})")
        train_cfg = train_config(cfg, "m1", strategy=strategy)
        train_cfg.eval_sample = 0
        params = encoder.init_params(ds.point_features[0].dim, int(cfg["encoder.dim"]), seed=int(cfg["seed"]))
        started = time.perf_counter()
        _, logs = trainer.train_m1(ds, params, train_cfg)
        logger.info("strategy %s finished in %.1fs", strategy, time.perf_counter() - started)
        per_strategy[strategy] = logs
        for log in logs:
            rows.append((log.epoch, strategy, log.p_at_1, log.seconds, log.sampling_seconds))
    baseline = None
    if "uniform" in per_strategy:
        baseline = float(np.mean([log.seconds for log in per_strategy["uniform"]]))
    for strategy, logs in per_strategy.items():
        summaries.append(
            negmine.overhead_report(
                strategy,
                [log.seconds for log in logs],
                [log.sampling_seconds for log in logs],
                baseline,
            )
        )
    return rows, summaries


def cmd_compare_miners(args) -> int:
    cfg = _load_cfg(args)
    if args.data_points and args.data_labels:
        ds = load_dataset(args.data_points, args.data_labels)
    else:
        spec = synth.SynthSpec(
            num_clusters=int(cfg["synth.num_clusters"]),
            points_per_cluster=int(cfg["synth.points_per_cluster"]),
            labels_per_cluster=int(cfg["synth.labels_per_cluster"]),
            vocab_size=int(cfg["synth.vocab_size"]),
            dim=int(cfg["encoder.dim"]),
            token_overlap=float(cfg["synth.token_overlap"]),
            noise_rate=float(cfg["synth.noise_rate"]),
            seed=int(cfg["seed"]),
            positives_per_point=int(cfg["synth.positives_per_point"]),
            identity_weight=float(cfg["synth.identity_weight"]),
        )
        ds = synth.generate(spec).dataset
    strategies = [tok.strip() for tok in args.strategies.split(",") if tok.strip()]
    if not strategies:
        raise ConfigError("no strategies given")
    rows, summaries = run_miner_comparison(ds, cfg, strategies)

    out = _out_dir(args)
    with open(out / "miner_comparison.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "strategy", "p_at_1", "seconds", "sampling_seconds"])
        writer.writerows(rows)
    lines = [
        f"{s.strategy}: epoch {s.epoch_seconds:.3f}s sampling {s.sampling_seconds:.3f}s "
        f"fraction_increase {s.fraction_increase:.2f}"
        for s in summaries
    ]
    (out / "overheads.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out, "compare-miners", cfg, {"strategies": strategies})
    print("\n".join(lines))
    print(f"per-epoch curves -> {out / 'miner_comparison.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xcmine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"xcmine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--threads", type=int, help="worker threads (default 1, reproducible)")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--out", help="output directory (optional)")

    p = sub.add_parser("stats", help="dataset statistics report")
    p.add_argument("--data-points", required=True)
    p.add_argument("--data-labels", required=True)
    common(p, out_required=False)
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("synth", help="generate a planted-cluster corpus")
    common(p)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train encoder, classifiers, and fusion")
    p.add_argument("--data-points", required=True)
    p.add_argument("--data-labels", required=True)
    common(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="rank labels for test points")
    p.add_argument("--model", required=True, help="directory produced by train")
    p.add_argument("--data-points", required=True)
    p.add_argument("--data-labels", required=True)
    p.add_argument("--k", type=int, default=5)
    common(p)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="predictions.tsv from predict")
    p.add_argument("--data-points", required=True, help="test file with ground truth")
    p.add_argument("--train-points", help="training file for label propensities")
    p.add_argument("--k", default="1,3,5", help="comma-separated cutoffs")
    p.add_argument("--per-point", action="store_true")
    common(p, out_required=False)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("verify-bound", help="check the negative-mining guarantee exactly")
    p.add_argument("--data-points", required=True)
    p.add_argument("--data-labels", required=True)
    p.add_argument("--model", help="optional train output dir; default random encoder")
    p.add_argument("--radius", type=float, required=True)
    common(p, out_required=False)
    p.set_defaults(handler=cmd_verify_bound)

    p = sub.add_parser("compare-miners", help="per-epoch accuracy and overhead per strategy")
    p.add_argument("--strategies", default="ngame,uniform,static_cluster,anns_refresh")
    p.add_argument("--data-points")
    p.add_argument("--data-labels")
    common(p)
    p.set_defaults(handler=cmd_compare_miners)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, RangeError, NormError, NumericsError, DegenerateInput, ValueError, OSError) as exc:
        logger.error("data error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
