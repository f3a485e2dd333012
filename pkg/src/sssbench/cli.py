"""Command-line entry point: ``sssbench <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from sssbench import __version__
from sssbench.augment import (
    SplitMethod,
    TargetStrategy,
    build_training_set,
    example_dump_lines,
    legacy_pipeline_split,
)
from sssbench.corpus import load_dataset
from sssbench.diagnostics import (
    distribution_stats,
    inputs_per_target,
    target_distribution,
    write_inputs_csv,
    write_rank_csv,
)
from sssbench.evaluation import METRIC_NAMES, evaluate
from sssbench.models import MODEL_KINDS
from sssbench.models.checkpoint import load_checkpoint, read_meta
from sssbench.synthetic import bundled_dataset_path, generate_log, write_log


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="interaction log (default: bundled synthetic log)")
    p.add_argument("--format", choices=("triplet", "grouped"), default="triplet")
    p.add_argument("--kcore", type=int, default=5)


def _setting_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split", choices=("original", "prefix", "suffix", "sliding"), default="original")
    p.add_argument("--window", type=int, default=None, help="sliding window length T")
    p.add_argument("--target", choices=("single", "multi"), default="single")
    p.add_argument("--max-len", type=int, default=50)


def _load(args):
    path = args.data or bundled_dataset_path()
    return path, load_dataset(path, args.format, args.kcore)


def _training_set(args, ds):
    if args.window is not None and args.split != "sliding":
        raise SystemExit("--window only applies to --split sliding")
    method = SplitMethod(args.split, args.window)
    return build_training_set(ds.split, method, TargetStrategy(args.target), args.max_len)


def cmd_stats(args) -> int:
    _, ds = _load(args)
    print(ds.stats.as_line())
    return 0


def cmd_build(args) -> int:
    _, ds = _load(args)
    if args.legacy:
        ts = legacy_pipeline_split(ds.sequences, args.max_len)
    else:
        ts = _training_set(args, ds)
    method, strategy = ts.provenance
    print(
        f"split={method} target={strategy} sequences={len(ts.sequences)} "
        f"examples={len(ts)} skipped={ts.skipped} discarded={ts.discarded}"
    )
    if args.dump:
        with open(args.dump, "w") as fh:
            for line in example_dump_lines(ts):
                fh.write(line + "\n")
    return 0


def cmd_train(args) -> int:
    from sssbench.trainer import TrainConfig, train_model

    path, ds = _load(args)
    ts = _training_set(args, ds)
    config = TrainConfig(
        d=args.d, max_len=args.max_len, batch_size=args.batch_size, lr=args.lr,
        patience=args.patience, max_epochs=args.max_epochs, seed=args.seed, loss=args.loss,
        num_blocks=args.blocks, num_heads=args.heads, filter_seen=args.filter_seen,
    )
    provenance = {
        "dataset": str(path), "format": args.format, "kcore": args.kcore,
        "split": str(ts.method), "target": str(ts.strategy), "loss": str(config.loss),
        "seed": args.seed, "max_len": args.max_len, "filter_seen": args.filter_seen,
        "version": __version__,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _, report = train_model(
        args.model, ts, ds.split, config, ds.catalog.num_items, checkpoint=out, provenance=provenance
    )
    report_path = out.with_suffix(".report.json")
    report_path.write_text(json.dumps({**report.to_dict(), "provenance": provenance}, indent=2) + "\n")
    print(
        f"model={args.model} epochs={report.epochs} best_epoch={report.best_epoch} "
        f"valid_{config.early_stop_metric}={report.best_metric:.4f} checkpoint={out}"
    )
    return 0


def cmd_eval(args) -> int:
    meta = read_meta(args.checkpoint)
    prov = meta.get("provenance", {})
    model = load_checkpoint(args.checkpoint)
    data = args.data or prov.get("dataset")
    if data is None:
        raise SystemExit("no --data given and the checkpoint does not record a dataset")
    ds = load_dataset(data, args.format or prov.get("format", "triplet"), prov.get("kcore", args.kcore))
    if ds.catalog.num_items != model.num_items:
        raise SystemExit(f"catalog has {ds.catalog.num_items} items but the model expects {model.num_items}")
    max_len = prov.get("max_len", 50)
    report = evaluate(model, ds.split, args.phase, max_len, prov.get("filter_seen", False))
    report.check_invariants()
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.header:
        w.writerow(["model", "split", "target", "loss", "seed", *METRIC_NAMES])
    w.writerow([
        meta["kind"], prov.get("split", ""), prov.get("target", ""), prov.get("loss", ""),
        prov.get("seed", ""), *(f"{report[m]:.6f}" for m in METRIC_NAMES),
    ])
    return 0


def cmd_diagnose(args) -> int:
    _, ds = _load(args)
    ts = _training_set(args, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{ts.method}_{ts.strategy}".replace(":", "")
    dist = target_distribution(ts, ds.catalog.num_items)
    write_rank_csv(dist, out / f"{stem}_target_probability.csv")
    write_inputs_csv(inputs_per_target(ts), out / f"{stem}_inputs_per_target.csv")
    stats = distribution_stats(dist, ds.catalog.num_items)
    print(f"split={ts.method} target={ts.strategy} examples={len(ts)} {stats.as_line()}")
    return 0


def cmd_grid(args) -> int:
    from sssbench.runner import GridConfig, run_grid

    config = GridConfig.load(args.config)
    if args.workers is not None:
        config.workers = args.workers
    result = run_grid(config, args.out)
    print(f"cells={len(result.cells)} ok={len(result.successful)} failed={len(result.failed)} out={args.out}")
    return 0 if result.successful else 1


def cmd_gradcheck(args) -> int:
    from sssbench.objective import LossKind, check_model_gradients

    worst = 0.0
    for kind in args.models:
        for loss in args.losses:
            rep = check_model_gradients(kind, LossKind.parse(loss), seed=args.seed)
            worst = max(worst, rep.worst)
            print(f"{kind} {loss} max_rel_error={rep.worst:.3e} coords={sum(rep.coords_checked.values())}")
    return 0 if worst <= args.tol else 1


def cmd_synth(args) -> int:
    log = generate_log(num_users=args.users, num_items=args.items, exponent=args.exponent, seed=args.seed)
    write_log(log, args.out)
    print(f"wrote {len(log)} interactions to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sssbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset statistics after k-core filtering")
    _dataset_args(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build", help="build a training set and report its size")
    _dataset_args(p)
    _setting_args(p)
    p.add_argument("--legacy", action="store_true", help="replay the split-while-reading loader instead")
    p.add_argument("--dump", default=None, help="write one 'input-csv<TAB>target' line per example")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    _dataset_args(p)
    _setting_args(p)
    p.add_argument("--model", choices=MODEL_KINDS, default="attn")
    p.add_argument("--loss", default="ce", help="ce, bce or bce:K (K negatives)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--filter-seen", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; prints one CSV row")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="defaults to the dataset recorded in the checkpoint")
    p.add_argument("--format", choices=("triplet", "grouped"), default=None)
    p.add_argument("--kcore", type=int, default=5)
    p.add_argument("--phase", choices=("valid", "test"), default="test")
    p.add_argument("--header", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="target distribution and inputs-per-target CSVs")
    _dataset_args(p)
    _setting_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("grid", help="run a configured experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("gradcheck", help="finite-difference check of the hand-written gradients")
    p.add_argument("--models", nargs="+", choices=("attn", "gru"), default=["attn", "gru"])
    p.add_argument("--losses", nargs="+", default=["ce", "bce"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a seeded synthetic interaction log")
    p.add_argument("--users", type=int, default=1000)
    p.add_argument("--items", type=int, default=400)
    p.add_argument("--exponent", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
