"""Evaluation metrics and diagnostics for ranked moment predictions.

Records carry spans as plain (start, end) pairs in any consistent time
unit (seconds or normalized); thresholds and band widths must use the
same unit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_MAP_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.96, 0.05), 2))
DEFAULT_CENTER_BINS = ((0.0, 0.1), (0.1, 0.2), (0.2, 0.3), (0.3, 0.4), (0.4, 0.5))


@dataclass
class EvalRecord:
    """Ranked predictions and ground truths for one video-sentence pair."""

    ranked_preds: list[tuple[tuple[float, float], float]]  # ((start, end), score), score-descending
    gt_spans: list[tuple[float, float]]
    anchors: list[float] | None = None   # per-prediction anchor points
    offsets: list[float] | None = None   # raw deformable sampling offsets
    qid: str = ""

    def __post_init__(self):
        if not self.gt_spans:
            raise ValueError("record needs at least one ground-truth span")
        scores = [s for _, s in self.ranked_preds]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranked_preds must be sorted by descending score")


def raw_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0.0:
        return 1.0 if a == b else 0.0
    return inter / union


def _top1_iou(record: EvalRecord) -> float:
    if not record.ranked_preds:
        return 0.0
    top = record.ranked_preds[0][0]
    return max(raw_iou(top, gt) for gt in record.gt_spans)


def recall_at_1(records: list[EvalRecord], iou_threshold: float) -> float:
    """Fraction of records whose top prediction reaches the IoU threshold."""
    if not records:
        raise ValueError("empty record set")
    hits = sum(_top1_iou(r) >= iou_threshold for r in records)
    return hits / len(records)


def average_precision(record: EvalRecord, iou_threshold: float) -> float:
    """Ranked-retrieval AP with greedy one-to-one GT claiming.

    In rank order each prediction claims the best-IoU unclaimed GT with
    IoU >= threshold; AP is the mean over GTs of precision at each
    claiming rank (unclaimed GTs contribute 0).
    """
    claimed = [False] * len(record.gt_spans)
    tp = 0
    precision_sum = 0.0
    for rank, (pred, _) in enumerate(record.ranked_preds, start=1):
        best, best_iou = None, iou_threshold
        for j, gt in enumerate(record.gt_spans):
            if claimed[j]:
                continue
            iou = raw_iou(pred, gt)
            if iou >= best_iou:
                best, best_iou = j, iou
        if best is not None:
            claimed[best] = True
            tp += 1
            precision_sum += tp / rank
    return precision_sum / len(record.gt_spans)


def mean_average_precision(records: list[EvalRecord],
                           thresholds=DEFAULT_MAP_THRESHOLDS) -> dict:
    """Per-threshold mAP (mean over records) plus their average."""
    if not records:
        raise ValueError("empty record set")
    per_threshold = {
        float(t): float(np.mean([average_precision(r, t) for r in records]))
        for t in thresholds
    }
    return {"per_threshold": per_threshold,
            "average": float(np.mean(list(per_threshold.values())))}


def mean_iou(records: list[EvalRecord]) -> float:
    """Mean over records of the top-1 max-over-GT IoU."""
    if not records:
        raise ValueError("empty record set")
    return float(np.mean([_top1_iou(r) for r in records]))


def boundary_hit_rate(records: list[EvalRecord], band_width: float) -> float:
    """Fraction of records where some (GT, prediction) pair has both
    boundary errors within half the band width."""
    if band_width <= 0.0:
        raise ValueError("band width must be positive")
    half = 0.5 * band_width
    hits = 0
    for record in records:
        hit = any(
            abs(ps - gs) <= half and abs(pe - ge) <= half
            for (ps, pe), _ in record.ranked_preds
            for (gs, ge) in record.gt_spans)
        hits += hit
    return hits / len(records)


@dataclass
class CenterErrorReport:
    bins: tuple
    mean_iou_per_bin: list[float]      # NaN for empty bins
    proportion_per_bin: list[float]
    considered: int
    skipped: bool = False


def center_error_diagnostic(records: list[EvalRecord],
                            bins=DEFAULT_CENTER_BINS) -> CenterErrorReport:
    """Bin top-1 predictions by |reference - GT center| / GT length.

    The reference point is the prediction's anchor when anchors are
    present, else its center; only predictions whose reference lies
    inside a GT are considered, attributed to the containing GT with the
    highest IoU against the prediction.
    """
    per_bin_ious: list[list[float]] = [[] for _ in bins]
    considered = 0
    for record in records:
        if not record.ranked_preds:
            continue
        top, _ = record.ranked_preds[0]
        ref = record.anchors[0] if record.anchors else 0.5 * (top[0] + top[1])
        containing = [gt for gt in record.gt_spans if gt[0] <= ref <= gt[1]]
        if not containing:
            continue
        gt = max(containing, key=lambda g: raw_iou(top, g))
        length = gt[1] - gt[0]
        if length <= 0.0:
            continue
        error = abs(ref - 0.5 * (gt[0] + gt[1])) / length
        iou = raw_iou(top, gt)
        for i, (lo, hi) in enumerate(bins):
            last = i == len(bins) - 1
            if lo <= error < hi or (last and error == hi):
                per_bin_ious[i].append(iou)
                considered += 1
                break
    if considered == 0:
        return CenterErrorReport(bins=tuple(bins), mean_iou_per_bin=[], proportion_per_bin=[],
                                 considered=0, skipped=True)
    return CenterErrorReport(
        bins=tuple(bins),
        mean_iou_per_bin=[float(np.mean(b)) if b else float("nan") for b in per_bin_ious],
        proportion_per_bin=[len(b) / considered for b in per_bin_ious],
        considered=considered)


@dataclass
class OffsetHistogram:
    bin_edges: list[float]
    mass: list[float]
    skipped: bool = False


def offset_histogram(records: list[EvalRecord], bin_edges) -> OffsetHistogram:
    """Normalized histogram of absolute sampling offsets.

    bin_edges are left edges plus a final right edge (may be inf); mass
    sums to 1 over all offsets falling into the bins.
    """
    offsets = [abs(o) for r in records if r.offsets for o in r.offsets]
    if not offsets:
        return OffsetHistogram(bin_edges=list(bin_edges), mass=[], skipped=True)
    counts, _ = np.histogram(offsets, bins=np.asarray(bin_edges, dtype=float))
    total = counts.sum()
    if total == 0:
        return OffsetHistogram(bin_edges=list(bin_edges), mass=[0.0] * len(counts))
    return OffsetHistogram(bin_edges=list(bin_edges), mass=(counts / total).tolist())


def score_iou_correlation(records: list[EvalRecord]) -> float:
    """Pearson correlation of prediction scores vs max-over-GT IoUs."""
    scores, ious = [], []
    for record in records:
        for pred, score in record.ranked_preds:
            scores.append(score)
            ious.append(max(raw_iou(pred, gt) for gt in record.gt_spans))
    if len(scores) < 2:
        raise ValueError("need at least two predictions for a correlation")
    scores = np.asarray(scores)
    ious = np.asarray(ious)
    if np.std(scores) == 0.0 or np.std(ious) == 0.0:
        raise ValueError("zero variance in scores or IoUs; correlation undefined")
    return float(np.corrcoef(scores, ious)[0, 1])
