"""Command-line entry point for the ensemble-evolution pipeline."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    cmd_compare,
    cmd_evaluate,
    cmd_sample,
    cmd_search,
    cmd_train_surrogate,
    load_config,
    metric_from_flag,
)

_METRIC_CHOICES = ["prop1", "prop2", "prop-harm", "dis", "cos-dist", "arch-dist"]


def _add_common(parser):
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divens",
                                     description="Evolve behaviourally diverse classifier ensembles")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="train a random architecture sample and emit the distance dataset")
    _add_common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-surrogate", help="fit the random-forest distance estimator")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="distance dataset CSV from `sample`")
    p.add_argument("--out", required=True)

    p = sub.add_parser("search", help="run novelty search and train the final ensemble")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["exact", "surrogate"], default="surrogate")
    p.add_argument("--model", default=None, help="surrogate model file (surrogate mode)")
    p.add_argument("--metric", choices=_METRIC_CHOICES, default=None,
                   help="override the config's diversity metric")

    p = sub.add_parser("compare", help="exact vs surrogate runtime/accuracy comparison")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None, help="reuse an existing surrogate model file")
    p.add_argument("--repetitions", type=int, default=None)

    p = sub.add_parser("evaluate", help="re-evaluate a persisted ensemble run directory")
    _add_common(p)
    p.add_argument("--out", required=True, help="run directory produced by `search`")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config, seed_override=args.seed)

    if args.command == "sample":
        result = cmd_sample(cfg, args.out)
        print(f"wrote {result['manifest']['rows_written']} rows to {result['dataset']}")
    elif args.command == "train-surrogate":
        result = cmd_train_surrogate(cfg, args.dataset, args.out)
        print(f"model: {result['model']}")
        print(json.dumps(result["report"]["fidelity"], indent=2, sort_keys=True))
    elif args.command == "search":
        metric = metric_from_flag(args.metric) if args.metric else None
        result = cmd_search(cfg, args.out, mode=args.mode, model_path=args.model, metric=metric)
        report = result["report"]
        print(f"test accuracy: {report['test_accuracy']:.4f} (val {report['val_accuracy']:.4f})")
    elif args.command == "compare":
        summary = cmd_compare(cfg, args.out, model_path=args.model, repetitions=args.repetitions)
        wall = summary["wall_clock"]
        print(
            f"median exact {wall['median_exact_s']:.2f}s vs surrogate "
            f"{wall['median_surrogate_s']:.2f}s (ratio {wall['speedup_ratio']:.2f})"
        )
        print(
            f"median accuracy exact {summary['median_exact_accuracy']:.4f} "
            f"vs surrogate {summary['median_surrogate_accuracy']:.4f}"
        )
    elif args.command == "evaluate":
        payload = cmd_evaluate(cfg, args.out)
        print(f"test accuracy: {payload['test_accuracy']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
