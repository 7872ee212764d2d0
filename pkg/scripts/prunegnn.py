"""
PruneGNN — Command Line
Entry point for every pipeline:
    prunegnn {thresholds,generate,train,eval,variance,timing,reproduce,config}
Exit code 1 on a failed check or domain error, 2 on usage errors.
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

import argparse
import json

from config.settings import DATA_DIR, MODEL_DIR, FULL_SCALE, TIMING_CONFIG, ensure_dirs
from engine.errors import ConfigError, PruneGnnError
from engine.maestro import ExperimentConfig, Maestro


def float_list(text: str) -> list:
    values = [v for v in text.split(",") if v.strip()]
    if not values:
        raise argparse.ArgumentTypeError("expected a non-empty comma-separated list")
    try:
        return [float(v) for v in values]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def int_list(text: str) -> list:
    return [int(v) for v in float_list(text)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prunegnn", description="Threshold-pruned GNN power allocation for D2D networks")
    parser.add_argument("--config", help="flat JSON experiment config")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--output-dir")
    parser.add_argument("--no-ledger", action="store_true", help="skip the SQLite run ledger")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("thresholds", help="distance and neighbour threshold tables")
    p.add_argument("--ratio", "--ratios", dest="ratios", type=float_list, help="target ratio(s), comma-separated")
    p.add_argument("--alpha", "--alphas", dest="alphas", type=float_list, help="path-loss exponent(s)")
    p.add_argument("--lambda", "--lambdas", dest="lambdas", type=float_list, help="intensity(ies)")
    p.add_argument("--kind", choices=["distance", "neighbour", "both"], default="both")
    p.add_argument("--table", type=int, choices=[1, 2, 3, 4], help="1 distance, 2 neighbour, 3-4 variance study")
    p.add_argument("--neighbour-ratio", type=float, help="neighbour table target ratio (default 0.95)")

    p = sub.add_parser("generate", help="sample a dataset of network instances")
    p.add_argument("--count", type=int, required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--pairs", type=int)
    group.add_argument("--lambda", dest="intensity", type=float)
    p.add_argument("--region", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--dmin", type=float)
    p.add_argument("--dmax", type=float)
    p.add_argument("--weights", choices=["all_ones", "uniform_random"])
    p.add_argument("--seed", dest="sub_seed", type=int)
    p.add_argument("--out", default=str(DATA_DIR / "dataset.jsonl"))

    p = sub.add_parser("train", help="train a GNN on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", default="auto", help="distance:t | neighbour:n | complete | auto")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", dest="sub_seed", type=int)
    p.add_argument("--out", default=str(MODEL_DIR / "model.npz"))
    p.add_argument("--log", help="training log CSV")

    p = sub.add_parser("eval", help="score a model and the baselines on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--spec", default="auto")
    p.add_argument("--baselines", type=lambda s: [b for b in s.split(",") if b])
    p.add_argument("--csv")

    p = sub.add_parser("variance", help="Monte-Carlo interference variance study")
    p.add_argument("--trials", type=int)
    p.add_argument("--lambdas", type=float_list)
    p.add_argument("--alphas", type=float_list)
    p.add_argument("--ratio", type=float, default=0.95)

    p = sub.add_parser("timing", help="inference time versus pair count")
    p.add_argument("--ratio", type=float, default=TIMING_CONFIG["target_ratio"])
    p.add_argument("--pairs", type=int_list)
    p.add_argument("--repeats", type=int, default=TIMING_CONFIG["repeats"])
    p.add_argument("--warmups", type=int, default=TIMING_CONFIG["warmups"])
    p.add_argument("--instances", type=int, default=TIMING_CONFIG["instances"])

    p = sub.add_parser("reproduce", help="run the pipeline behind a published table or figure")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--table", type=int, choices=range(1, 8))
    target.add_argument("--figure", type=int, choices=[3, 4, 5])
    p.add_argument("--full-scale", action="store_true", help="10000/2000 samples, T up to 300, 100 epochs")

    p = sub.add_parser("config", help="inspect configuration")
    p.add_argument("action", choices=["show"])
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    changes = {}
    seed = getattr(args, "sub_seed", None)
    seed = args.seed if seed is None else seed
    if seed is not None:
        changes["seed"] = seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.output_dir:
        changes["output_dir"] = args.output_dir
    if args.command == "generate":
        for key, value in [("num_pairs", args.pairs), ("region_side", args.region), ("path_loss_exponent", args.alpha),
                           ("d_min", args.dmin), ("d_max", args.dmax), ("weight_mode", args.weights)]:
            if value is not None:
                changes[key] = value
        if args.intensity is not None:
            changes.update(intensity=args.intensity, num_pairs=None)
    if args.command == "train" and args.epochs:
        changes["epochs"] = args.epochs
    if args.command == "reproduce" and args.full_scale:
        changes.update(FULL_SCALE)
    return cfg.replace(**changes) if changes else cfg


def single_ratio(ratios, default: float) -> float:
    if not ratios:
        return default
    if len(ratios) > 1:
        raise ConfigError(f"expected one target ratio here, got {ratios}")
    return ratios[0]


def run_thresholds(maestro: Maestro, args):
    """`--table` picks the pipeline and overrides `--kind`; tables 3 and 4 are the variance study."""
    if args.table in (3, 4):
        return maestro.run_variance_study(args.lambdas, args.alphas, single_ratio(args.ratios, 0.95))
    kind = {1: "distance", 2: "neighbour"}.get(args.table, args.kind)
    if kind == "neighbour":
        neighbour_ratio = args.neighbour_ratio or single_ratio(args.ratios, 0.95)
        return maestro.run_threshold_tables(None, args.alphas, args.lambdas, neighbour_ratio, kind=kind)
    return maestro.run_threshold_tables(args.ratios, args.alphas, args.lambdas, args.neighbour_ratio or 0.95, kind=kind)


def dispatch(args) -> int:
    cfg = load_config(args)
    if args.command == "config":
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return 0

    ensure_dirs()
    maestro = Maestro(cfg, record=not args.no_ledger, verbose=not args.quiet)
    if args.command == "thresholds":
        run_thresholds(maestro, args)
    elif args.command == "generate":
        maestro.generate(args.count, args.out)
    elif args.command == "train":
        maestro.train_model(args.data, args.spec, args.out, args.log)
    elif args.command == "eval":
        maestro.evaluate_file(args.model, args.data, args.spec, args.baselines, args.csv)
    elif args.command == "variance":
        maestro.run_variance_study(args.lambdas, args.alphas, args.ratio, args.trials)
    elif args.command == "timing":
        maestro.run_timing(args.ratio, args.pairs, args.repeats, args.warmups, args.instances)
    elif args.command == "reproduce":
        return maestro.reproduce(table=args.table, figure=args.figure)
    return 1 if maestro.failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except PruneGnnError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
