"""Training loop, checkpointing, evaluation, and prediction files."""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .config import Config
from .data import Dataset, Sample
from .intervals import MomentTriplet, triplet_to_span
from .metrics import EvalRecord
from .model import GroundingModel, batch_loss
from .objective import rank_proposals

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def set_seeds(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def build_model(cfg: Config) -> GroundingModel:
    """Construct a model with seed-determined initialization."""
    set_seeds(cfg.seed)
    return GroundingModel(cfg)


@dataclass
class TrainResult:
    model: GroundingModel
    history: list[dict] = field(default_factory=list)
    best_checkpoint: Path | None = None
    last_checkpoint: Path | None = None


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def _check_finite(breakdown, epoch: int) -> None:
    for name in ("loc", "qual", "sal", "regul", "total"):
        value = getattr(breakdown, name)
        if not math.isfinite(value):
            raise RuntimeError(f"non-finite loss term '{name}' ({value}) at epoch {epoch}")


def train(cfg: Config, dataset: Dataset, out_dir: str | Path,
          resume: str | Path | None = None, eval_every: int | None = None) -> TrainResult:
    """Train on the dataset; keep the best-by-average-mAP checkpoint.

    One epoch is one pass over the dataset in shuffled batches. Fully
    deterministic given the config seed; resuming from a checkpoint
    reproduces the run it interrupted.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sal_weight = cfg.resolved_sal_weight(dataset.has_saliency_labels)

    start_epoch = 0
    best_map = -1.0
    if resume is not None:
        ckpt_cfg, model, extras = load_checkpoint(resume)
        arch_fields = ("dim", "heads", "num_queries", "num_points", "enc_layers",
                       "dec_layers", "video_feat_dim", "text_feat_dim")
        for name in arch_fields:
            if getattr(ckpt_cfg, name) != getattr(cfg, name):
                raise ValueError(
                    f"resume: checkpoint {name}={getattr(ckpt_cfg, name)} does not "
                    f"match requested {name}={getattr(cfg, name)}")
        optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr,
                                      weight_decay=cfg.weight_decay)
        optimizer.load_state_dict(extras["optimizer_state"])
        start_epoch = extras["epoch"]
        best_map = extras.get("best_map", -1.0)
    else:
        model = build_model(cfg)
        optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr,
                                      weight_decay=cfg.weight_decay)

    result = TrainResult(model=model)
    log_path = out_dir / "log.jsonl"
    log_fh = open(log_path, "a")
    batch_size = min(cfg.batch_size, len(dataset))

    try:
        for epoch in range(start_epoch, cfg.epochs):
            torch.manual_seed(cfg.seed * 1000003 + epoch)  # per-epoch stream, resume-safe
            rng = _epoch_rng(cfg.seed, epoch)
            order = rng.permutation(len(dataset))
            model.train()
            epoch_terms = {"loc": 0.0, "qual": 0.0, "sal": 0.0, "regul": 0.0, "total": 0.0}
            n_batches = 0
            for start in range(0, len(order), batch_size):
                batch = [dataset.samples[i] for i in order[start:start + batch_size]]
                total, breakdown = batch_loss(model, batch, cfg, rng, sal_weight)
                _check_finite(breakdown, epoch)
                optimizer.zero_grad()
                total.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                for key in epoch_terms:
                    epoch_terms[key] += getattr(breakdown, key)
                n_batches += 1

            row = {"epoch": epoch}
            row.update({k: v / n_batches for k, v in epoch_terms.items()})

            should_eval = (eval_every is not None and (epoch + 1) % eval_every == 0) \
                or epoch == cfg.epochs - 1
            if should_eval:
                report, _records, _preds = evaluate(model, dataset)
                row.update(report)
                if report["mAP_avg"] > best_map:
                    best_map = report["mAP_avg"]
                    result.best_checkpoint = out_dir / "best.ckpt"
                    save_checkpoint(result.best_checkpoint, cfg, model, optimizer,
                                    epoch + 1, best_map)
            result.history.append(row)
            log_fh.write(json.dumps(row) + "\n")
            log_fh.flush()
    finally:
        log_fh.close()

    result.last_checkpoint = out_dir / "last.ckpt"
    save_checkpoint(result.last_checkpoint, cfg, model, optimizer, cfg.epochs, best_map)
    if result.best_checkpoint is None:
        result.best_checkpoint = result.last_checkpoint
    return result


def save_checkpoint(path: str | Path, cfg: Config, model: GroundingModel,
                    optimizer, epoch: int, best_map: float) -> None:
    path = Path(path)
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": cfg.to_dict(),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "best_map": best_map,
    }, path)
    manifest = {"format_version": CHECKPOINT_FORMAT_VERSION, "config": cfg.to_dict(),
                "epoch": epoch}
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path: str | Path) -> tuple[Config, GroundingModel, dict]:
    blob = torch.load(path, weights_only=False)
    if blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {blob.get('format_version')}")
    cfg = Config(**blob["config"])
    model = GroundingModel(cfg)
    model.load_state_dict(blob["model_state"])
    return cfg, model, {"optimizer_state": blob["optimizer_state"],
                        "epoch": blob["epoch"], "best_map": blob["best_map"]}


def predict_sample(model: GroundingModel, sample: Sample) -> dict:
    """Ranked predictions in seconds plus anchors and raw offsets."""
    model.eval()
    with torch.no_grad():
        out = model(sample.video_feats, sample.text_feats)
    triplets = out.final_state.triplets.cpu().numpy()
    quality = out.final_quality.cpu().numpy()
    spans = [triplet_to_span(MomentTriplet(*row)) for row in triplets]
    order = rank_proposals(spans, quality)
    duration = sample.duration
    offsets = []
    for layer in out.offsets:
        for key in ("start_offsets", "end_offsets"):
            offsets.extend(float(o) * duration for o in layer[key].flatten())
    return {
        "qid": sample.qid,
        "duration": duration,
        "relevant_windows": [[float(s.t_s * duration), float(s.t_e * duration)]
                             for s in sample.gt_spans],
        "predictions": [
            [float(spans[i].t_s * duration), float(spans[i].t_e * duration),
             float(quality[i])]
            for i in order],
        "anchors": [float(triplets[i, 0]) * duration for i in order],
        "offsets": offsets,
    }


def record_from_prediction(pred: dict) -> EvalRecord:
    return EvalRecord(
        ranked_preds=[((p[0], p[1]), p[2]) for p in pred["predictions"]],
        gt_spans=[tuple(w) for w in pred["relevant_windows"]],
        anchors=pred.get("anchors"),
        offsets=pred.get("offsets"),
        qid=pred.get("qid", ""),
    )


def evaluate(model: GroundingModel, dataset: Dataset
             ) -> tuple[dict, list[EvalRecord], list[dict]]:
    """Metric report, evaluation records, and prediction-file rows."""
    predictions = [predict_sample(model, sample) for sample in dataset.samples]
    records = [record_from_prediction(p) for p in predictions]
    report = report_from_records(records)
    return report, records, predictions


def report_from_records(records: list[EvalRecord]) -> dict:
    ap = metrics.mean_average_precision(records)
    return {
        "R1@0.3": metrics.recall_at_1(records, 0.3),
        "R1@0.5": metrics.recall_at_1(records, 0.5),
        "R1@0.7": metrics.recall_at_1(records, 0.7),
        "mAP@0.5": ap["per_threshold"][0.5],
        "mAP@0.75": ap["per_threshold"][0.75],
        "mAP_avg": ap["average"],
        "mIoU": metrics.mean_iou(records),
    }


def write_predictions(path: str | Path, predictions: list[dict]) -> None:
    with open(path, "w") as fh:
        for pred in predictions:
            fh.write(json.dumps(pred) + "\n")


def read_predictions(path: str | Path) -> list[dict]:
    preds = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            preds.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed prediction line: {exc}") from exc
    return preds
