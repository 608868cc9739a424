"""Command line entry point: ``spikeplace <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation. ``SPIKEPLACE_LOG`` sets log verbosity (e.g. INFO).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig
from .data import generate_synthetic_dataset, write_synthetic_dataset
from .exceptions import ConfigError, DataError, InvariantError
from .matching import BOUNDARY_MODES
from .persistence import load_matrix

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config JSON")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seq-lengths", type=_int_list, help="e.g. 1,2,4,10")
    p.add_argument("--recall-n", type=_int_list, help="e.g. 1,5,10")
    p.add_argument("--boundary", choices=BOUNDARY_MODES)
    p.add_argument("--gt-tolerance", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeplace", description="Modular spiking place recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with manifest")
    _common(p)
    p.add_argument("--places", type=int, default=100)
    p.add_argument("--noise", type=float, default=15.0)
    p.add_argument("--occlusion", type=float, default=0.1)

    for name, text in [("prepare", "preprocess manifest images into a cache"),
                       ("train", "train the ensemble artifact"),
                       ("infer", "compute similarity and distance matrices")]:
        p = sub.add_parser(name, help=text)
        _common(p)

    p = sub.add_parser("evaluate", help="R@N grid and sparsity for distance matrices")
    _common(p)
    p.add_argument("distances", nargs="*", type=Path, help="distance matrix files (.json or .csv)")
    p.add_argument("--gt", type=Path, help="prepared cache dir/cache.json or GT matrix file")

    p = sub.add_parser("report", help="aggregate metrics into tables")
    _common(p)
    p.add_argument("metrics", nargs="+", type=Path, help="metrics.json files")
    p.add_argument("--single", help="method name of the single Modular SNN")
    p.add_argument("--ensemble", help="method name of the ensemble")
    p.add_argument("--sl", type=int, default=4, help="sequence length for the ablation grid")
    p.add_argument("--members", nargs="*", type=Path, default=[],
                   help="member similarity matrices for the commutativity check")
    p.add_argument("--gt", type=Path)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig(base_dir=Path.cwd())
    overrides = {
        "seed": args.seed, "workers": args.workers, "seq_lengths": args.seq_lengths,
        "recall_n": args.recall_n, "boundary": args.boundary, "gt_tolerance": args.gt_tolerance,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    if args.out is not None:
        config.out = str(args.out.resolve())
    config.validate()
    return config


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = load_config(args)
    out = config.out_dir

    if args.command == "synth":
        ref, qry = generate_synthetic_dataset(args.places, args.noise, args.occlusion, config.seed)
        manifest = write_synthetic_dataset(out, ref, qry, name=f"synthetic-{args.places}")
        result = {"manifest": str(manifest), "places": args.places}
    elif args.command == "prepare":
        result = pipeline.cmd_prepare(config)
    elif args.command == "train":
        result = pipeline.cmd_train(config)
    elif args.command == "infer":
        result = pipeline.cmd_infer(config)
    elif args.command == "evaluate":
        distances = args.distances or [out / pipeline.INFER_DIR / "distance.json"]
        gt = args.gt or out / pipeline.CACHE_DIR
        doc = pipeline.cmd_evaluate(config, distances, gt)
        result = {name: res["recall"] for name, res in doc["methods"].items()}
    elif args.command == "report":
        comm = None
        if args.members:
            if args.gt is None:
                raise ConfigError("--members needs --gt")
            sims = [load_matrix(p) for p in args.members]
            GT = pipeline.load_ground_truth(args.gt, sims[0].shape[0], config.gt_tolerance)
            comm = pipeline.commutativity_check(sims, GT, args.sl, config.boundary)
        report = pipeline.cmd_report(args.metrics, out / "report", args.single, args.ensemble, args.sl, comm)
        result = {"report": str(out / "report" / "report.md"), "ablation": report["ablation"]}
    else:  # pragma: no cover - argparse enforces the choices
        parser.error(f"unknown command {args.command}")
    print(json.dumps(result, indent=2, default=str))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SPIKEPLACE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
