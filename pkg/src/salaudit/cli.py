"""Command-line entry point: ``salaudit <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .config import RunConfig, config_from_dict, load_config
from .dataio import (
    dataset_mean,
    read_json,
    write_json,
    write_raw_dataset,
    write_saliency_archive,
)
from .errors import ConfigError, SalauditError
from .model import ground_truth_saliency, oracle_manifest
from .perturbation import PerturbationSpec
from .pipeline import (
    load_dataset,
    run_pipeline,
    run_reliability,
    run_saliency,
    run_scoring,
)
from .report import render_report
from .synthetic import synthetic_suite


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split() if t]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--perturbation", action="append", choices=["mean", "random-rgb"],
                   help="perturbation kind (repeatable; default both)")
    p.add_argument("--order", action="append", choices=["morf", "lerf"], help="order mode (repeatable)")
    p.add_argument("--L", type=_int_list, help="comma-separated L grid, e.g. 20,40,60")
    p.add_argument("--methods", type=_str_list, help="comma-separated native method ids")
    p.add_argument("--import-salm", action="append", default=None, metavar="PATH",
                   help="score an externally produced saliency archive (repeatable)")
    p.add_argument("--min-confidence", type=float)
    p.add_argument("--max-confidence", type=float)
    p.add_argument("--classes", type=_int_list, help="comma-separated class labels to keep")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="salaudit", description="Saliency metric scoring and reliability checks.")
    parser.add_argument("--version", action="version", version=f"salaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "dataset-stats": "print dataset size, per-channel mean/std and label counts",
        "saliency": "compute saliency maps into <out>/maps",
        "score": "score the maps in <out>/maps",
        "reliability": "compute report.json from the score files in <out>",
        "report": "print a text summary of <out>/report.json",
        "synth": "write a synthetic oracle suite (dataset, model, ground-truth maps, config)",
        "run": "full pipeline",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "synth":
            p.add_argument("--n-images", type=int, default=200)
            p.add_argument("--size", type=int, nargs=2, default=(16, 16), metavar=("H", "W"))
            p.add_argument("--channels", type=int, default=3)
            p.add_argument("--link", choices=["identity", "sigmoid"], default="identity")
        if name == "report":
            p.add_argument("--coverage", help="CI coverage to display, e.g. 0.95")
            p.add_argument("--json", action="store_true", help="print the raw JSON instead")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    overrides = {
        "seed": args.seed,
        "perturbations": args.perturbation,
        "orders": args.order,
        "L": args.L,
        "methods": args.methods,
        "imports": args.import_salm,
        "min_confidence": args.min_confidence,
        "max_confidence": args.max_confidence,
        "classes": args.classes,
        "out": args.out,
        "threads": args.threads,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.L is not None:
        cfg.L = sorted(set(cfg.L))
    return cfg


def _dataset_stats(cfg: RunConfig) -> int:
    cfg.validate()
    dataset, _ = load_dataset(cfg)
    mean, std = dataset_mean(dataset)
    labels, counts = np.unique(dataset.labels, return_counts=True)
    doc = {
        "name": dataset.name, "n_images": len(dataset), "shape": list(dataset.image_shape),
        "mean": mean.tolist(), "std": std.tolist(),
        "label_counts": {str(int(k)): int(v) for k, v in zip(labels, counts)},
    }
    print(json.dumps(doc, indent=2))
    return 0


def _synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = Path(cfg.out)
    h, w = args.size
    dataset, oracle = synthetic_suite(cfg.seed, args.n_images, h, w, args.channels, 10, args.link)
    out.mkdir(parents=True, exist_ok=True)
    write_raw_dataset(dataset, out / "images.rawt")
    manifest, blob = oracle_manifest(oracle)
    write_json(manifest, out / "oracle.json")
    (out / "oracle.bin").write_bytes(blob)
    methods = ["sensitivity", "gradient-x-input", "edge", "random"]
    if args.link == "identity":
        spec = PerturbationSpec("mean", tuple(dataset_mean(dataset)[0]))
        maps = [ground_truth_saliency(oracle, dataset.image(i), spec) for i in range(len(dataset))]
        write_saliency_archive(maps, out / "ground-truth.salm")
        methods.append("ground-truth")
    config = {
        "seed": cfg.seed,
        "dataset": {"kind": "raw", "paths": [str((out / "images.rawt").resolve())]},
        "model": {"kind": "affine-oracle", "link": args.link,
                  "manifest": str((out / "oracle.json").resolve()), "weights": str((out / "oracle.bin").resolve())},
        "methods": methods,
        "L": [l for l in cfg.L if l <= h * w] or [h * w],
        "faithfulness_pixels": min(cfg.faithfulness_pixels, h * w),
        "out": str((out / "results").resolve()),
    }
    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    print(f"wrote synthetic suite of {len(dataset)} images to {out}")
    return 0


def _report(cfg: RunConfig, args: argparse.Namespace) -> int:
    path = Path(cfg.out) / "report.json"
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'salaudit reliability' first")
    doc = read_json(path)
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        sys.stdout.write(render_report(doc, args.coverage))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "dataset-stats":
            return _dataset_stats(cfg)
        if args.command == "synth":
            return _synth(cfg, args)
        if args.command == "report":
            return _report(cfg, args)
        if args.command == "saliency":
            run_saliency(cfg)
        elif args.command == "score":
            run_scoring(cfg)
        elif args.command == "reliability":
            run_reliability(cfg)
        elif args.command == "run":
            report = run_pipeline(cfg)
            sys.stdout.write(render_report(report))
    except SalauditError as exc:
        print(f"salaudit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"salaudit: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
