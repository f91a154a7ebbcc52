"""Command-line front end: gen, train, eval, sweep, time, classify.

Every subcommand takes an explicit --seed, resolves its full configuration,
runs one library call, writes its machine-readable output to --out, and drops
a run manifest (resolved config, input/output hashes, wall time) alongside at
<out>.manifest.json. Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

import nmodal
from nmodal.data import (
    SynthConfig,
    generate_synthetic,
    read_bundle,
    split_bundle,
    write_bundle,
    write_jsonl,
)
from nmodal.downstream import (
    ExperimentConfig,
    report_to_json,
    format_report_table,
    run_account_experiment,
    run_stance_experiment,
    write_roc_csv,
)
from nmodal.errors import FormatError, NumericError
from nmodal.evaluation import (
    EvalConfig,
    evaluate_recall,
    format_sweep_table,
    format_timing_table,
    sweep_projection_dims,
    sweep_to_json,
    time_training,
)
from nmodal.losses import LossConfig
from nmodal.model import TrainConfig, load_checkpoint, save_checkpoint, train


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_modalities(text: str):
    out = []
    for part in text.split(","):
        if ":" not in part:
            raise UsageError(f"--modalities entry {part!r} must look like name:dim")
        name, _, dim = part.partition(":")
        if not name:
            raise UsageError(f"--modalities entry {part!r} has an empty name")
        try:
            out.append((name, int(dim)))
        except ValueError:
            raise UsageError(f"--modalities entry {part!r} has a non-integer dim") from None
    return out


def _parse_int_list(text: str, flag: str):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from None


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_path: str, command: str, config: dict, seed: int, inputs, outputs, wall: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {p: _sha256(p) for p in outputs},
        "wall_seconds": wall,
        "version": nmodal.__version__,
    }
    with open(out_path + ".manifest.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _build(ctor, *a, **kw):
    # flag-value validation failures are usage errors, not data errors
    try:
        return ctor(*a, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _resolve_threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("NMODAL_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"NMODAL_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed; all streams derive from it (default 0)")
    p.add_argument("--out", required=True, help="output file; a .manifest.json lands alongside")
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap on worker pools (default: NMODAL_THREADS or 1; execution is sequential today)",
    )
    p.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="force fixed reduction orders (default on; the only implemented mode)",
    )


def build_parser() -> CliParser:
    parser = CliParser(prog="nmodal", description="n-modal contrastive embedding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[], help="generate a synthetic embedding bundle")
    g.add_argument("--posts", type=int, default=1000, help="number of posts (default 1000)")
    g.add_argument(
        "--modalities",
        default="text:768,image:768,video:768",
        help="comma list of name:dim (default text:768,image:768,video:768)",
    )
    g.add_argument("--latent-dim", type=int, default=32, help="latent factor dimension (default 32)")
    g.add_argument("--noise-sigma", type=float, default=0.1, help="additive noise scale (default 0.1)")
    g.add_argument("--accounts", type=int, default=33, help="account count (default 33)")
    g.add_argument("--stance-mix", type=float, default=0.5, help="expected class-1 fraction (default 0.5)")
    g.add_argument("--jsonl-out", default=None, help="also write a JSONL debug copy here")
    _add_common(g)

    t = sub.add_parser("train", help="train projection heads on a bundle")
    t.add_argument("--data", required=True, help="input bundle file")
    t.add_argument("--loss", choices=["clip", "triplet"], default="clip", help="loss kind (default clip)")
    t.add_argument("--epochs", type=int, default=10, help="training epochs (default 10)")
    t.add_argument("--batch-size", type=int, default=128, help="batch size (default 128; clamped to the post count)")
    t.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 0.001)")
    t.add_argument("--proj-dim", type=int, default=256, help="shared latent dimension (default 256)")
    t.add_argument("--dropout", type=float, default=0.1, help="head dropout rate (default 0.1)")
    t.add_argument("--tau", type=float, default=None, help="softmax temperature, clip loss only (default 1.0)")
    t.add_argument("--margin", type=float, default=None, help="hinge margin, triplet loss only (default 0.2)")
    t.add_argument("--alpha", type=float, default=None, help="triplet loss scale (default 1.0)")
    t.add_argument(
        "--pair-normalization",
        choices=["ordered_pair_count", "two_n"],
        default=None,
        help="clip pair-sum divisor (default ordered_pair_count)",
    )
    t.add_argument(
        "--reversed-triplet-sign",
        action="store_true",
        default=None,
        help="flip the hinge difference inside the triplet term (default off)",
    )
    t.add_argument("--no-shuffle", action="store_true", help="keep generation order within epochs")
    _add_common(t)

    e = sub.add_parser("eval", help="cross-modal retrieval recall of a checkpoint")
    e.add_argument("--data", required=True, help="bundle file supplying the evaluation pool")
    e.add_argument("--model", required=True, help="checkpoint file")
    e.add_argument("--ks", default="1,5,10,25", help="comma list of K values (default 1,5,10,25)")
    e.add_argument("--population", type=int, default=100, help="posts per trial population (default 100)")
    e.add_argument("--trials", type=int, default=5, help="independent populations (default 5)")
    e.add_argument(
        "--aggregation",
        choices=["sum_all", "topk_filter"],
        default="sum_all",
        help="post scoring rule (default sum_all)",
    )
    e.add_argument(
        "--split",
        choices=["none", "heldout"],
        default="none",
        help="none: pool is the whole file; heldout: pool is the held-out tail split (default none)",
    )
    e.add_argument("--include-runtime", action="store_true", help="write wall times into the report JSON")
    _add_common(e)

    s = sub.add_parser("sweep", help="train and evaluate across projection dims")
    s.add_argument("--data", required=True, help="bundle file; split into train and held-out pools")
    s.add_argument("--dims", default="64,128,256,512,768", help="comma list of dims (default 64,128,256,512,768)")
    s.add_argument("--loss", choices=["clip", "triplet"], default="clip", help="loss kind (default clip)")
    s.add_argument("--epochs", type=int, default=50, help="training epochs per dim (default 50)")
    s.add_argument("--batch-size", type=int, default=128, help="batch size (default 128; clamped)")
    s.add_argument("--ks", default="1,5,10,25", help="comma list of K values (default 1,5,10,25)")
    s.add_argument("--population", type=int, default=100, help="posts per trial population (default 100)")
    s.add_argument("--trials", type=int, default=5, help="evaluation trials per dim (default 5)")
    s.add_argument("--include-runtime", action="store_true", help="write wall times into the report JSON")
    _add_common(s)

    m = sub.add_parser("time", help="wall-clock training cost table")
    m.add_argument("--sizes", default="1000", help="comma list of train sizes (default 1000)")
    m.add_argument("--losses", default="clip,triplet", help="comma list of loss kinds (default clip,triplet)")
    m.add_argument("--epochs-list", default="1,10", help="comma list of epoch counts (default 1,10)")
    m.add_argument("--trials", type=int, default=5, help="repetitions per cell (default 5)")
    m.add_argument(
        "--modalities",
        default="text:768,image:768,video:768",
        help="comma list of name:dim for the timing data (default text:768,image:768,video:768)",
    )
    m.add_argument("--proj-dim", type=int, default=256, help="shared latent dimension (default 256)")
    _add_common(m)

    c = sub.add_parser("classify", help="downstream stance and account classification")
    c.add_argument("--data", required=True, help="bundle file with labels")
    c.add_argument("--model", required=True, help="checkpoint file")
    c.add_argument("--task", choices=["stance", "account", "both"], default="both", help="which experiment (default both)")
    c.add_argument("--folds", type=int, default=5, help="cross-validation folds (default 5)")
    c.add_argument("--epochs", type=int, default=500, help="classifier training epochs (default 500)")
    c.add_argument("--lr", type=float, default=0.5, help="classifier learning rate (default 0.5)")
    c.add_argument(
        "--smote",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="SMOTE-balance training folds (default: off for stance, on for account)",
    )
    c.add_argument("--smote-k", type=int, default=5, help="SMOTE neighbor count (default 5)")
    c.add_argument("--shuffle-labels", action="store_true", help="control arm: shuffle labels before CV")
    c.add_argument("--roc-csv", default=None, help="write the stance ROC curve to this CSV")
    _add_common(c)

    return parser


def _cmd_gen(args) -> tuple[dict, list, list]:
    cfg = _build(
        SynthConfig,
        post_count=args.posts,
        modalities=_parse_modalities(args.modalities),
        latent_dim=args.latent_dim,
        noise_sigma=args.noise_sigma,
        account_count=args.accounts,
        stance_mix=args.stance_mix,
        seed=args.seed,
    )
    bundle = generate_synthetic(cfg)
    write_bundle(bundle, args.out)
    outputs = [args.out]
    if args.jsonl_out:
        write_jsonl(bundle, args.jsonl_out)
        outputs.append(args.jsonl_out)
    print(f"wrote {bundle.post_count} posts x {len(bundle.modalities)} modalities to {args.out}")
    config = asdict(cfg)
    return config, [], outputs


def _loss_config_from(args) -> LossConfig:
    explicit = {
        "--tau": args.tau,
        "--margin": args.margin,
        "--alpha": args.alpha,
        "--pair-normalization": args.pair_normalization,
        "--reversed-triplet-sign": args.reversed_triplet_sign,
    }
    if args.loss == "clip":
        for flag in ("--margin", "--alpha", "--reversed-triplet-sign"):
            if explicit[flag] is not None:
                _warn(f"{flag} is unused with --loss clip")
    else:
        for flag in ("--tau", "--pair-normalization"):
            if explicit[flag] is not None:
                _warn(f"{flag} is unused with --loss triplet")
    return _build(
        LossConfig,
        kind=args.loss,
        tau=args.tau if args.tau is not None else 1.0,
        margin=args.margin if args.margin is not None else 0.2,
        alpha=args.alpha if args.alpha is not None else 1.0,
        pair_normalization=args.pair_normalization or "ordered_pair_count",
        reversed_triplet_sign=bool(args.reversed_triplet_sign),
    )


def _train_config_from(args, post_count: int) -> TrainConfig:
    batch = args.batch_size
    if batch > post_count:
        _warn(f"--batch-size {batch} exceeds the {post_count}-post bundle; clamping")
        batch = post_count
    return _build(
        TrainConfig,
        epochs=args.epochs,
        batch_size=batch,
        learning_rate=args.lr,
        seed=args.seed,
        loss_config=_loss_config_from(args),
        d_out=args.proj_dim,
        dropout=args.dropout,
        shuffle=not args.no_shuffle,
    )


def _cmd_train(args) -> tuple[dict, list, list]:
    bundle = read_bundle(args.data)
    cfg = _train_config_from(args, bundle.post_count)
    state, log = train(bundle, cfg)
    save_checkpoint(state, args.out)
    first, last = log.epoch_mean_losses[0], log.epoch_mean_losses[-1]
    print(f"trained {cfg.epochs} epochs; mean loss {first:.6f} -> {last:.6f}")
    config = asdict(cfg)
    return config, [args.data], [args.out]


def _cmd_eval(args) -> tuple[dict, list, list]:
    bundle = read_bundle(args.data)
    if args.split == "heldout":
        _, bundle = split_bundle(bundle)
    state = load_checkpoint(args.model)
    cfg = _build(
        EvalConfig,
        population_size=args.population,
        ks=_parse_int_list(args.ks, "--ks"),
        trials=args.trials,
        aggregation=args.aggregation,
        seed=args.seed,
    )
    report = evaluate_recall(state, bundle, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json(include_runtime=args.include_runtime) + "\n")
    print(report.format_table())
    config = {"eval": asdict(cfg), "split": args.split}
    return config, [args.data, args.model], [args.out]


def _cmd_sweep(args) -> tuple[dict, list, list]:
    bundle = read_bundle(args.data)
    train_split, _ = split_bundle(bundle)
    batch = args.batch_size
    if batch > train_split.post_count:
        _warn(f"--batch-size {batch} exceeds the {train_split.post_count}-post train split; clamping")
        batch = train_split.post_count
    train_cfg = _build(
        TrainConfig,
        epochs=args.epochs,
        batch_size=batch,
        seed=args.seed,
        loss_config=LossConfig(kind=args.loss),
    )
    eval_cfg = _build(
        EvalConfig,
        population_size=args.population,
        ks=_parse_int_list(args.ks, "--ks"),
        trials=args.trials,
        seed=args.seed,
    )
    dims = _parse_int_list(args.dims, "--dims")
    sweep = sweep_projection_dims(bundle, dims, train_cfg, eval_cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(sweep_to_json(sweep, include_runtime=args.include_runtime) + "\n")
    print(format_sweep_table(sweep))
    config = {"dims": dims, "train": asdict(train_cfg), "eval": asdict(eval_cfg)}
    return config, [args.data], [args.out]


def _cmd_time(args) -> tuple[dict, list, list]:
    sizes = _parse_int_list(args.sizes, "--sizes")
    losses = [x for x in args.losses.split(",") if x]
    for kind in losses:
        if kind not in ("clip", "triplet"):
            raise UsageError(f"--losses entry {kind!r} must be clip or triplet")
    epochs_list = _parse_int_list(args.epochs_list, "--epochs-list")
    specs = [(kind, size) for kind in losses for size in sizes]
    rows = time_training(
        specs,
        epochs_list,
        trials=args.trials,
        seed=args.seed,
        modalities=_parse_modalities(args.modalities),
        d_out=args.proj_dim,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(rows, sort_keys=True, indent=2) + "\n")
    print(format_timing_table(rows))
    config = {
        "sizes": sizes,
        "losses": losses,
        "epochs_list": epochs_list,
        "trials": args.trials,
        "modalities": args.modalities,
        "proj_dim": args.proj_dim,
    }
    return config, [], [args.out]


def _cmd_classify(args) -> tuple[dict, list, list]:
    bundle = read_bundle(args.data)
    state = load_checkpoint(args.model)
    tasks = ["stance", "account"] if args.task == "both" else [args.task]
    reports = {}
    outputs = [args.out]
    for task in tasks:
        smote = args.smote if args.smote is not None else (task == "account")
        cfg = ExperimentConfig(
            folds=args.folds,
            epochs=args.epochs,
            lr=args.lr,
            smote=smote,
            smote_k=args.smote_k,
            seed=args.seed,
            shuffle_labels=args.shuffle_labels,
        )
        if task == "stance":
            report = run_stance_experiment(state, bundle, cfg)
        else:
            report = run_account_experiment(state, bundle, cfg)
        reports[task] = report
        print(format_report_table(report))
        print()
        if task == "stance" and args.roc_csv:
            write_roc_csv([tuple(p) for p in report["roc_points"]], args.roc_csv)
            outputs.append(args.roc_csv)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(reports, sort_keys=True, indent=2) + "\n")
    config = {
        "task": args.task,
        "folds": args.folds,
        "epochs": args.epochs,
        "lr": args.lr,
        "smote": args.smote,
        "smote_k": args.smote_k,
        "shuffle_labels": args.shuffle_labels,
    }
    return config, [args.data, args.model], outputs


_DISPATCH = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "time": _cmd_time,
    "classify": _cmd_classify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        threads = _resolve_threads(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    started = time.perf_counter()
    try:
        config, inputs, outputs = _DISPATCH[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - started

    config["threads"] = threads
    config["deterministic"] = bool(args.deterministic)
    _write_manifest(args.out, args.command, config, args.seed, inputs, outputs, wall)
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
