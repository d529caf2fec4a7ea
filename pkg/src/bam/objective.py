"""Matching and training objective.

Matching is localization-oriented: the cost couples only the L1 boundary
distance and the generalized IoU, never a classification score. The
quality head is supervised toward the max IoU of each proposal with the
ground truths and later drives proposal ranking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .intervals import MomentSpan, giou_1d, l1_span_distance

DEFAULT_L1_WEIGHT = 10.0
DEFAULT_GIOU_WEIGHT = 1.0

# below this many injective assignments, exhaustive search (in
# lexicographic order, so ties break deterministically) replaces the
# Hungarian solver
_BRUTE_FORCE_LIMIT = 5000


@dataclass
class MatchResult:
    """Injective assignment of ground truths to predictions."""

    assignment: tuple[int, ...]  # assignment[n] = matched prediction index
    total_cost: float


def pair_cost(gt: MomentSpan, pred: MomentSpan,
              l1_weight: float = DEFAULT_L1_WEIGHT,
              giou_weight: float = DEFAULT_GIOU_WEIGHT) -> float:
    """Matching cost: weighted L1 distance plus (1 - gIoU)."""
    return l1_weight * l1_span_distance(gt, pred) + giou_weight * (1.0 - giou_1d(gt, pred))


def span_l1_matrix(gt: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Pairwise L1 boundary distance; gt (N, 2), pred (M, 2) -> (N, M)."""
    return (gt.unsqueeze(1) - pred.unsqueeze(0)).abs().sum(dim=-1)


def span_iou_matrix(gt: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Pairwise temporal IoU for (possibly unclamped) spans with s <= e."""
    gs, ge = gt[:, 0].unsqueeze(1), gt[:, 1].unsqueeze(1)
    ps, pe = pred[:, 0].unsqueeze(0), pred[:, 1].unsqueeze(0)
    inter = (torch.minimum(ge, pe) - torch.maximum(gs, ps)).clamp(min=0.0)
    union = (ge - gs) + (pe - ps) - inter
    return inter / union.clamp(min=1e-12)


def span_giou_matrix(gt: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Pairwise generalized IoU for spans with s <= e."""
    gs, ge = gt[:, 0].unsqueeze(1), gt[:, 1].unsqueeze(1)
    ps, pe = pred[:, 0].unsqueeze(0), pred[:, 1].unsqueeze(0)
    inter = (torch.minimum(ge, pe) - torch.maximum(gs, ps)).clamp(min=0.0)
    union = (ge - gs) + (pe - ps) - inter
    hull = torch.maximum(ge, pe) - torch.minimum(gs, ps)
    iou = inter / union.clamp(min=1e-12)
    return iou - (hull - union) / hull.clamp(min=1e-12)


def cost_matrix(gt: torch.Tensor, pred: torch.Tensor,
                l1_weight: float = DEFAULT_L1_WEIGHT,
                giou_weight: float = DEFAULT_GIOU_WEIGHT) -> torch.Tensor:
    return l1_weight * span_l1_matrix(gt, pred) + giou_weight * (1.0 - span_giou_matrix(gt, pred))


def hungarian_match(costs: np.ndarray) -> MatchResult:
    """Minimum-cost injective assignment of N ground truths to M predictions.

    Ties between optimal assignments break toward the lexicographically
    smallest assignment tuple on small instances.
    """
    costs = np.asarray(costs, dtype=float)
    n, m = costs.shape
    if n > m:
        raise ValueError(f"{n} ground truths exceed {m} predictions; cannot match injectively")
    if math.perm(m, n) <= _BRUTE_FORCE_LIMIT:
        best, best_cost = None, math.inf
        for perm in permutations(range(m), n):
            cost = sum(costs[i, perm[i]] for i in range(n))
            if cost < best_cost:
                best, best_cost = perm, cost
        return MatchResult(assignment=tuple(best), total_cost=float(best_cost))
    rows, cols = linear_sum_assignment(costs)
    order = np.argsort(rows)
    assignment = tuple(int(c) for c in cols[order])
    return MatchResult(assignment=assignment, total_cost=float(costs[rows, cols].sum()))


def match_spans(gt_spans: list[MomentSpan], pred_spans: torch.Tensor,
                l1_weight: float = DEFAULT_L1_WEIGHT,
                giou_weight: float = DEFAULT_GIOU_WEIGHT) -> MatchResult:
    gt = pred_spans.new_tensor([[s.t_s, s.t_e] for s in gt_spans])
    costs = cost_matrix(gt, pred_spans.detach(), l1_weight, giou_weight)
    return hungarian_match(costs.cpu().numpy())


def localization_loss(gt: torch.Tensor, pred: torch.Tensor, match: MatchResult,
                      l1_weight: float = DEFAULT_L1_WEIGHT,
                      giou_weight: float = DEFAULT_GIOU_WEIGHT) -> torch.Tensor:
    """Matched-pair cost re-evaluated with gradient flow to predictions."""
    matched = pred[list(match.assignment)]
    l1 = (gt - matched).abs().sum()
    giou = span_giou_matrix(gt, matched).diagonal().sum()
    return l1_weight * l1 + giou_weight * (len(match.assignment) - giou)


def quality_loss(q: torch.Tensor, pred_spans: torch.Tensor, gt: torch.Tensor,
                 targets: torch.Tensor | None = None) -> torch.Tensor:
    """Sum over all M proposals of |q_m - max-over-GT IoU|.

    The IoU targets are a stop-gradient; pass precomputed targets to pin
    them (finite-difference gradient verification needs this, since
    numeric differentiation would otherwise see the targets move).
    """
    if targets is None:
        targets = span_iou_matrix(gt, pred_spans.detach()).amax(dim=0)
    return (q - targets).abs().sum()


def rank_proposals(pred_spans, scores) -> list[int]:
    """Indices ordered by descending score; stable on ties."""
    scores = np.asarray([float(s) for s in scores])
    if len(scores) != len(pred_spans):
        raise ValueError("spans and scores differ in length")
    return list(np.argsort(-scores, kind="stable"))


@dataclass
class LossBreakdown:
    """Per-term loss values (already weight-free) plus the weighted total."""

    loc: float
    qual: float
    sal: float
    regul: float
    total: float
    skipped: list[str] = field(default_factory=list)
