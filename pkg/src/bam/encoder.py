"""Multimodal encoder: text-to-video cross-attention, then self-attention.

Produces the clip-level memory the decoder attends over, plus the
saliency supervision losses (margin, rank-contrastive, negative-relation)
that guide cross-modal alignment.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .layers import AttentionBlock, sinusoidal_encoding


@dataclass
class MemoryBank:
    """Encoded clip-level features and their temporal positions."""

    memory: torch.Tensor          # (N_v, D)
    clip_positions: torch.Tensor  # (N_v,) normalized clip centers, increasing
    positional_enc: torch.Tensor  # (N_v, D)


def clip_centers(n_clips: int, dtype=None, device=None) -> torch.Tensor:
    """Normalized temporal center of each clip: (i + 0.5) / N_v."""
    idx = torch.arange(n_clips, dtype=dtype or torch.get_default_dtype(), device=device)
    return (idx + 0.5) / n_clips


class MultimodalEncoder(nn.Module):
    def __init__(self, video_dim: int, text_dim: int, dim: int, heads: int,
                 layers: int, dropout: float = 0.0):
        super().__init__()
        self.dim = dim
        self.video_dim = video_dim
        self.text_dim = text_dim
        self.video_proj = nn.Linear(video_dim, dim)
        self.text_proj = nn.Linear(text_dim, dim)
        self.cross_blocks = nn.ModuleList(
            AttentionBlock(dim, heads, dropout) for _ in range(layers))
        self.self_blocks = nn.ModuleList(
            AttentionBlock(dim, heads, dropout) for _ in range(layers))

    def project(self, video_feats: torch.Tensor, text_feats: torch.Tensor):
        if video_feats.shape[-1] != self.video_dim:
            raise ValueError(
                f"video feature dim {video_feats.shape[-1]} != configured {self.video_dim}")
        if text_feats.shape[-1] != self.text_dim:
            raise ValueError(
                f"text feature dim {text_feats.shape[-1]} != configured {self.text_dim}")
        return self.video_proj(video_feats), self.text_proj(text_feats)

    def forward(self, video_feats: torch.Tensor, text_feats: torch.Tensor) -> MemoryBank:
        v, t = self.project(video_feats, text_feats)
        for block in self.cross_blocks:
            v = block(v, t)
        positions = clip_centers(v.shape[0], dtype=v.dtype, device=v.device)
        pos_enc = sinusoidal_encoding(positions, self.dim)
        for block in self.self_blocks:
            v = block(v, v, x_pe=pos_enc, kv_pe=pos_enc)
        return MemoryBank(memory=v, clip_positions=positions, positional_enc=pos_enc)


class SaliencyHead(nn.Module):
    """Affine map from a memory feature to a scalar saliency score."""

    def __init__(self, dim: int):
        super().__init__()
        self.fc = nn.Linear(dim, 1)

    def forward(self, memory: torch.Tensor) -> torch.Tensor:
        return self.fc(memory).squeeze(-1)


def inside_gt_mask(clip_positions: torch.Tensor, gt_spans) -> torch.Tensor:
    """Boolean mask of clips whose center falls inside any GT span."""
    mask = torch.zeros(clip_positions.shape[0], dtype=torch.bool, device=clip_positions.device)
    for span in gt_spans:
        mask |= (clip_positions >= span.t_s) & (clip_positions <= span.t_e)
    return mask


def sample_margin_pair(clip_positions: torch.Tensor, gt_spans,
                       saliency_labels: np.ndarray | None,
                       rng: np.random.Generator) -> tuple[int, int] | None:
    """Pick a (low, high) clip pair for the margin loss.

    With labels: lowest-label vs highest-label clip. Without: a random
    clip outside the GT spans vs a random one inside. Returns None when
    no valid pair exists (e.g. GT covers the whole video).
    """
    if saliency_labels is not None:
        labels = np.asarray(saliency_labels, dtype=float)
        low = int(labels.argmin())
        high = int(labels.argmax())
        if labels[low] == labels[high]:
            return None
        return low, high
    inside = inside_gt_mask(clip_positions, gt_spans).cpu().numpy()
    inside_idx = np.flatnonzero(inside)
    outside_idx = np.flatnonzero(~inside)
    if inside_idx.size == 0 or outside_idx.size == 0:
        return None
    return int(rng.choice(outside_idx)), int(rng.choice(inside_idx))


def margin_saliency_loss(scores: torch.Tensor, pairs: list[tuple[int, int]],
                         margin: float) -> torch.Tensor:
    """Mean hinge over (low, high) pairs: max(0, margin + S(low) - S(high))."""
    if not pairs:
        raise ValueError("margin loss needs at least one (low, high) pair")
    terms = [torch.clamp(margin + scores[lo] - scores[hi], min=0.0) for lo, hi in pairs]
    return torch.stack(terms).mean()


def rank_contrastive_loss(scores: torch.Tensor, saliency_labels,
                          inside_mask: torch.Tensor, tau: float = 0.5) -> torch.Tensor:
    """Rank-aware contrastive loss over reference label levels.

    References are the distinct positive (> 0) labels of clips inside GT
    moments; for each reference r the positive set is clips whose label
    is strictly higher than r. References with an empty positive set are
    skipped.
    """
    labels = torch.as_tensor(np.asarray(saliency_labels, dtype=float),
                             dtype=scores.dtype, device=scores.device)
    refs = torch.unique(labels[inside_mask & (labels > 0)])
    logits = scores / tau
    total = scores.new_zeros(())
    for r in refs:
        pos = labels > r
        if not bool(pos.any()):
            continue
        total = total - (torch.logsumexp(logits[pos], dim=0) - torch.logsumexp(logits, dim=0))
    return total


def negative_relation_loss(neg_scores: torch.Tensor) -> torch.Tensor:
    """Push saliency down for clips paired with a mismatched sentence.

    Scores are squashed by a logistic before the log, so each term is
    -log(1 - sigmoid(s)) = softplus(s).
    """
    return F.softplus(neg_scores).sum()
