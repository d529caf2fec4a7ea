"""Command-line entry points: synth, train, eval, analyze."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import metrics
from .config import Config
from .data import SyntheticSpec, generate_synthetic, load_dataset, write_dataset
from .train import (evaluate, load_checkpoint, read_predictions, record_from_prediction,
                    train, write_predictions)

log = logging.getLogger(__name__)

DEFAULT_HIT_RATE_BANDS = [float(w) for w in range(1, 11)]  # seconds
DEFAULT_OFFSET_EDGES = [0.0, 5.0, 10.0, float("inf")]      # seconds


def _load_data_dir(data_dir: Path, max_clips=None):
    return load_dataset(data_dir / "annotations.jsonl", data_dir / "features",
                        max_clips=max_clips, name=data_dir.name)


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_clips_range=(args.min_clips, args.max_clips),
        n_moments_range=(args.min_moments, args.max_moments),
        noise_level=args.noise,
        clip_stride=args.clip_stride,
    )
    dataset = generate_synthetic(args.n, args.seed, spec)
    out = Path(args.out)
    write_dataset(dataset, out)
    print(f"wrote {len(dataset)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = Config.from_file(args.config) if args.config else Config().with_env_overrides()
    dataset = _load_data_dir(Path(args.data), max_clips=cfg.max_clips)
    result = train(cfg, dataset, args.out, eval_every=args.eval_every)
    final = result.history[-1] if result.history else {}
    print(json.dumps({"best_checkpoint": str(result.best_checkpoint),
                      "last_checkpoint": str(result.last_checkpoint),
                      "final_epoch": final}, indent=2))
    return 0


def cmd_eval(args) -> int:
    cfg, model, _ = load_checkpoint(args.ckpt)
    dataset = _load_data_dir(Path(args.data), max_clips=cfg.max_clips)
    report, _records, predictions = evaluate(model, dataset)
    write_predictions(args.out, predictions)
    print(json.dumps(report, indent=2))
    return 0


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_analyze(args) -> int:
    records = [record_from_prediction(p) for p in read_predictions(args.preds)]
    if args.which == "hit_rate":
        rows = [(w, metrics.boundary_hit_rate(records, w)) for w in DEFAULT_HIT_RATE_BANDS]
        _write_csv(args.out, ["band_width_seconds", "hit_rate"], rows)
    elif args.which == "center_bins":
        report = metrics.center_error_diagnostic(records)
        if report.skipped:
            print("center_bins: no qualifying predictions (reference point never "
                  "inside a ground truth); skipped")
            return 0
        rows = [(lo, hi, miou, prop) for (lo, hi), miou, prop in
                zip(report.bins, report.mean_iou_per_bin, report.proportion_per_bin)]
        _write_csv(args.out, ["bin_lo", "bin_hi", "mean_iou", "proportion"], rows)
    elif args.which == "offsets":
        hist = metrics.offset_histogram(records, DEFAULT_OFFSET_EDGES)
        if hist.skipped:
            print("offsets: prediction file carries no offsets; skipped")
            return 0
        rows = [(hist.bin_edges[i], hist.bin_edges[i + 1], hist.mass[i])
                for i in range(len(hist.mass))]
        _write_csv(args.out, ["bin_lo_seconds", "bin_hi_seconds", "mass"], rows)
    elif args.which == "correlation":
        try:
            r = metrics.score_iou_correlation(records)
        except ValueError as exc:
            print(f"correlation: {exc}; skipped")
            return 0
        n = sum(len(rec.ranked_preds) for rec in records)
        _write_csv(args.out, ["pearson_r", "n_predictions"], [(r, n)])
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-clips", type=int, default=40)
    p.add_argument("--max-clips", type=int, default=80)
    p.add_argument("--min-moments", type=int, default=1)
    p.add_argument("--max-moments", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--clip-stride", type=float, default=2.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--data", required=True, help="dataset directory (from synth)")
    p.add_argument("--out", required=True, help="output directory for checkpoints/logs")
    p.add_argument("--eval-every", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="predictions.jsonl path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="diagnostic analyses over a prediction file")
    p.add_argument("--preds", required=True)
    p.add_argument("--which", required=True,
                   choices=["hit_rate", "center_bins", "offsets", "correlation"])
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
