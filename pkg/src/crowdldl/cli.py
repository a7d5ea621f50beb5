"""Command-line front end: dataset generation, training, evaluation,
gradient checking, and memory-attention inspection.

stdout carries machine-readable payloads only; diagnostics (including the
resolved config and seed for every run) go to stderr. Exit codes: 0 success,
2 usage error, 3 data/schema error, 4 numeric failure.
"""

import argparse
import json
import os
import sys

try:
    import tomllib as tomli
except ModuleNotFoundError:
    import tomli
from dataclasses import asdict

import numpy as np

from . import datagen, losses, matching, metrics, model, train as training
from .datagen import DatasetFormatError
from .model import CheckpointError

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _default_seed():
    return int(os.environ.get("CROWDLDL_SEED", "0"))


def _log(msg):
    print(msg, file=sys.stderr)


def _print_resolved(name, config):
    _log(f"[{name}] resolved config: {json.dumps(config, sort_keys=True)}")


def _load_samples(path):
    try:
        return datagen.read_dataset(path)
    except (OSError, DatasetFormatError) as e:
        _log(f"error: {e}")
        raise SystemExit(EXIT_DATA)


def _load_checkpoint(path):
    try:
        return model.load_checkpoint(path)
    except (OSError, CheckpointError) as e:
        _log(f"error: {e}")
        raise SystemExit(EXIT_DATA)


def cmd_gen_data(args):
    spec = datagen.GeneratorSpec(
        latent_dim=args.latent_dim, feature_dim=args.feature_dim,
        categories=args.categories, annotators=args.annotators,
        feature_noise=args.noise, vote_temperature=args.temperature,
        samples=args.samples, seed=args.seed,
        preference_spread=args.preference_spread)
    try:
        spec.validate()
        if spec.samples < 1:
            raise ValueError("samples must be >= 1")
    except ValueError as e:
        _log(f"error: {e}")
        return EXIT_USAGE
    _print_resolved("gen-data", {**{k: v for k, v in vars(spec).items()
                                    if k not in ("preference_matrices", "feature_map")}})
    samples = datagen.generate(spec)
    datagen.write_dataset(samples, args.out, spec.categories, spec.annotators, spec.feature_dim)
    counts = np.zeros(spec.categories)
    for s in samples:
        counts += np.bincount(s.votes, minlength=spec.categories)
    freqs = counts / counts.sum()
    print(json.dumps({"samples": len(samples), "C": spec.categories, "N": spec.annotators,
                      "d1": spec.feature_dim, "vote_frequencies": list(freqs),
                      "path": args.out}))
    return 0


def _build_config(args):
    config = training.TrainConfig()
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                file_cfg = tomli.load(fh)
        except (OSError, tomli.TOMLDecodeError) as e:
            _log(f"error: cannot read config: {e}")
            raise SystemExit(EXIT_USAGE)
        for key, value in file_cfg.items():
            if not hasattr(config, key):
                _log(f"error: unknown config key {key!r}")
                raise SystemExit(EXIT_USAGE)
            setattr(config, key, value)
    for key in ("lr", "lr_decay", "decay_every", "weight_decay", "epochs",
                "batch_size", "seed", "d2", "K", "loss_mode"):
        value = getattr(args, key.replace("K", "memory_slots") if key == "K" else key, None)
        if value is not None:
            setattr(config, key, value)
    for flag in args.ablation or []:
        if flag == "no-memory":
            config.use_memory = False
        elif flag == "single-branch":
            config.multi_branch = False
        elif flag == "no-subjectivity":
            config.use_subjectivity_loss = False
        else:
            _log(f"error: unknown ablation {flag!r}")
            raise SystemExit(EXIT_USAGE)
    try:
        config.validate()
    except ValueError as e:
        _log(f"error: {e}")
        raise SystemExit(EXIT_USAGE)
    return config


def cmd_train(args):
    config = _build_config(args)
    _print_resolved("train", asdict(config))
    samples, header = _load_samples(args.data)
    train_set, eval_set = datagen.split(samples, args.train_frac, args.split_seed
                                        if args.split_seed is not None else config.seed)
    try:
        final, best, log = training.train(config, train_set, eval_set)
    except ValueError as e:
        _log(f"error: {e}")
        return EXIT_DATA
    for branch in final.branches:
        for _, block in branch.blocks():
            if not np.all(np.isfinite(block)):
                _log("error: non-finite parameters after training")
                return EXIT_NUMERIC
    os.makedirs(args.out_dir, exist_ok=True)
    final_path = os.path.join(args.out_dir, "final.ckpt")
    best_path = os.path.join(args.out_dir, "best.ckpt")
    log_path = os.path.join(args.out_dir, "epochs.jsonl")
    model.save_checkpoint(final, final_path)
    model.save_checkpoint(best, best_path)
    training.write_epoch_log(log, log_path)
    best_epoch = min(range(len(log)), key=lambda i: log[i]["eval_l_kl"])
    print(json.dumps({"final": final_path, "best": best_path, "log": log_path,
                      "epochs": len(log), "best_epoch": best_epoch,
                      "best_eval_l_kl": log[best_epoch]["eval_l_kl"]}))
    return 0


def cmd_eval(args):
    params = _load_checkpoint(args.checkpoint)
    samples, header = _load_samples(args.data)
    if header["d1"] != params.dims.d1 or header["C"] != params.dims.C:
        _log(f"error: checkpoint dims {params.dims} incompatible with data header {header}")
        return EXIT_DATA
    _print_resolved("eval", {"checkpoint": args.checkpoint, "data": args.data,
                             "split": args.split, "train_frac": args.train_frac,
                             "split_seed": args.split_seed})
    if args.split != "all":
        train_part, test_part = datagen.split(samples, args.train_frac, args.split_seed)
        samples = train_part if args.split == "train" else test_part
    report = metrics.evaluate(samples, params)
    values = asdict(report)
    if not all(np.isfinite(v) for v in values.values()):
        _log("error: non-finite metric value")
        return EXIT_NUMERIC
    if args.csv:
        print(metrics.MetricReport.csv_header())
        print(report.csv_row())
    else:
        print(report.to_json())
    return 0


def cmd_grad_check(args):
    _print_resolved("grad-check", {"seed": args.seed, "tolerance": args.tolerance,
                                   "d1": args.feature_dim, "d2": args.d2,
                                   "K": args.memory_slots, "C": args.categories,
                                   "N": args.annotators, "batch": args.batch})
    rng = np.random.Generator(np.random.Philox(key=args.seed))
    dims = model.Dims(d1=args.feature_dim, d2=args.d2, K=args.memory_slots,
                      C=args.categories, N=args.annotators)
    total = dims.N * (dims.d2 * dims.d1 + dims.d2 + dims.d2 * dims.K + dims.C * dims.d2)
    if total > 10_000:
        _log(f"error: {total} parameters exceeds the grad-check budget (10000)")
        return EXIT_USAGE
    params = model.init(dims, rng)
    features = rng.normal(size=(args.batch, dims.d1))
    labels = [sorted(rng.integers(0, dims.C, size=dims.N).tolist()) for _ in range(args.batch)]
    dists = np.stack([datagen.vote_distribution(l, dims.C) for l in labels])
    report = training.grad_check(params, features, labels, dists)
    worst = max(report.values())
    print(json.dumps({"blocks": report, "max_relative_error": worst,
                      "tolerance": args.tolerance, "passed": bool(worst < args.tolerance)}))
    return 0 if worst < args.tolerance else EXIT_NUMERIC


def cmd_inspect_memory(args):
    params = _load_checkpoint(args.checkpoint)
    samples, header = _load_samples(args.data)
    _print_resolved("inspect-memory", {"checkpoint": args.checkpoint,
                                       "data": args.data, "sample_id": args.sample_id})
    by_id = {s.id: s for s in samples}
    if args.sample_id not in by_id:
        _log(f"error: sample {args.sample_id!r} not found")
        return EXIT_DATA
    sample = by_id[args.sample_id]
    trace = model.forward(params, sample.features)
    out = {"sample_id": sample.id, "K": params.dims.K, "branches": []}
    if params.dims.K == 0:
        out["memory"] = "bypassed"
    for n, bt in enumerate(trace.branches):
        info = {"branch": n, "predicted_category": int(np.argmax(bt.probs)),
                "probs": list(bt.probs)}
        if params.dims.K > 0:
            order = np.argsort(bt.attention)[::-1][:5]
            info["top_slots"] = [{"slot": int(k), "weight": float(bt.attention[k])}
                                 for k in order]
            att = np.maximum(bt.attention, 1e-300)
            info["attention_entropy"] = float(-np.sum(att * np.log(att)))
            info["attention_sum"] = float(np.sum(bt.attention))
        out["branches"].append(info)
    if params.dims.K > 0:
        phis = [losses.normalize_phi(b.memory) for b in params.branches]
        out["memory_distances"] = [[float(np.linalg.norm(a - b)) for b in phis] for a in phis]
    print(json.dumps(out))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="crowdldl",
                                     description="Crowd-voted emotion distribution learning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic crowd-voting dataset")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--annotators", type=int, default=4)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--preference-spread", type=float, default=0.45)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset file")
    p.add_argument("--config", help="TOML file mirroring TrainConfig fields")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-decay", type=float, default=None, dest="lr_decay")
    p.add_argument("--decay-every", type=int, default=None, dest="decay_every")
    p.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--d2", type=int, default=None)
    p.add_argument("--memory-slots", type=int, default=None, dest="memory_slots")
    p.add_argument("--loss-mode", choices=["match", "ce"], default=None, dest="loss_mode")
    p.add_argument("--ablation", action="append", default=None,
                   choices=["no-memory", "single-branch", "no-subjectivity"])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["all", "train", "test"], default="all")
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=_default_seed())
    p.add_argument("--csv", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--d2", type=int, default=8)
    p.add_argument("--memory-slots", type=int, default=16, dest="memory_slots")
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--annotators", type=int, default=4)
    p.add_argument("--batch", type=int, default=3)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("inspect-memory", help="attention and memory-diversity report for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample-id", required=True)
    p.set_defaults(fn=cmd_inspect_memory)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
