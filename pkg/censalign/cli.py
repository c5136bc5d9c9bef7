"""
censalign command line

Usage:
    censalign generate --family sigmoid --n 1000 --m 4 --seed 0 --out data.jsonl
    censalign validate --data data.jsonl
    censalign train --data data.jsonl --config cfg.json --out model.json
    censalign infer --model model.json --data data.jsonl --k 2 --out fit.json
    censalign identify --data data.jsonl --link identity --degree 2 --k 2 --out ident.json
    censalign baseline kmeans-loss --data data.jsonl --k 2 --out base.json
    censalign evaluate --fit fit.json --data data.jsonl --out scores.json
    censalign experiment --config exp.json --out-dir results/
    censalign censor-probe --model model.json --data data.jsonl --width 1.0
"""

import argparse
from typing import List, Optional

import censalign.config as cfg
import censalign.runner as runners
from censalign.exceptions import CensAlignError

logger = cfg.setup_logging("cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="censalign",
        description="Subtype and delay inference for interval-censored time series",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Generate a synthetic benchmark")
    generate.add_argument(
        "--family",
        required=True,
        help="sigmoid | quad1..quad6 | spline-incr | spline-any",
    )
    generate.add_argument("--n", type=int, default=cfg.GENERATOR_DEFAULTS["n_patients"])
    generate.add_argument("--m", type=int, default=cfg.GENERATOR_DEFAULTS["n_visits"])
    generate.add_argument("--noise-var", type=float, default=cfg.GENERATOR_DEFAULTS["noise_var"])
    generate.add_argument("--tmax", type=float, default=cfg.GENERATOR_DEFAULTS["t_max"])
    generate.add_argument("--subtype-prob", type=float, default=cfg.GENERATOR_DEFAULTS["subtype_prob"])
    generate.add_argument("--missing-rate", type=float, default=0.0)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--out", required=True)

    validate = commands.add_parser("validate", help="Check a dataset against the data model")
    validate.add_argument("--data", required=True)

    train = commands.add_parser("train", help="Train SubLign")
    train.add_argument("--data", required=True)
    train.add_argument("--config", help="JSON file of SubLign hyperparameters")
    train.add_argument("--out", required=True)
    train.add_argument("--no-align", action="store_true", help="Train SubNoLign (delays pinned at 0)")

    infer = commands.add_parser("infer", help="Infer subtypes and delays with a trained model")
    infer.add_argument("--model", required=True)
    infer.add_argument("--data", required=True)
    infer.add_argument("--k", type=int, default=2)
    infer.add_argument("--out", required=True)

    identify = commands.add_parser("identify", help="Exact identification from noiseless data")
    identify.add_argument("--data", required=True)
    identify.add_argument("--link", default="identity", choices=["sigmoid", "identity"])
    identify.add_argument("--degree", type=int)
    identify.add_argument("--k", type=int, default=2)
    identify.add_argument("--out", required=True)

    baseline = commands.add_parser("baseline", help="Fit a baseline")
    baselines = baseline.add_subparsers(dest="baseline", required=True)
    kmeans_loss = baselines.add_parser("kmeans-loss", help="k-means labels, then least-squares curves and delays")
    kmeans_loss.add_argument("--data", required=True)
    kmeans_loss.add_argument("--k", type=int, default=2)
    kmeans_loss.add_argument("--seed", type=int, default=0)
    kmeans_loss.add_argument("--out", required=True)

    evaluate = commands.add_parser("evaluate", help="Score a fit against ground truth")
    evaluate.add_argument("--fit", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--out")

    experiment = commands.add_parser("experiment", help="Run a multi-trial experiment")
    experiment.add_argument("--config", required=True)
    experiment.add_argument("--out-dir", default=cfg.RESULTS_DIR)

    probe = commands.add_parser("censor-probe", help="Compare delays after front and back censoring")
    probe.add_argument("--model", required=True)
    probe.add_argument("--data", required=True)
    probe.add_argument("--width", type=float, required=True)
    probe.add_argument("--out")
    return parser


def make_runner(args: argparse.Namespace):
    if args.command == "generate":
        return runners.GenerateRunner(
            args.family,
            args.out,
            missing_rate=args.missing_rate,
            n_patients=args.n,
            n_visits=args.m,
            noise_var=args.noise_var,
            t_max=args.tmax,
            subtype_prob=args.subtype_prob,
            seed=args.seed,
        )
    if args.command == "validate":
        return runners.ValidateRunner(args.data)
    if args.command == "train":
        return runners.TrainRunner(args.data, args.out, args.config, aligned=not args.no_align)
    if args.command == "infer":
        return runners.InferRunner(args.model, args.data, args.k, args.out)
    if args.command == "identify":
        return runners.IdentifyRunner(args.data, args.link, args.degree, args.k, args.out)
    if args.command == "baseline":
        return runners.KMeansLossRunner(args.data, args.k, args.out, seed=args.seed)
    if args.command == "evaluate":
        return runners.EvaluateRunner(args.fit, args.data, args.out)
    if args.command == "experiment":
        return runners.ExperimentRunner(args.config, args.out_dir)
    return runners.CensorProbeRunner(args.model, args.data, args.width, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one sub-command.

    Returns:
        0 on success, 1 on a handled failure (argparse exits with 2 on usage errors)
    """
    args = build_parser().parse_args(argv)
    try:
        return make_runner(args).run()
    except (CensAlignError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
