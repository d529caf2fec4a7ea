"""Full grounding model: encoder, dual-pathway decoder, quality head.

Also assembles the training loss over a batch, including the
cross-sample negative-sentence saliency term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import Config
from .data import Sample
from .decoder import (DecoderState, DualPathwayDecoder, LocalityEnhancer, LocalityMemory,
                      boundary_labels, boundary_regularization_loss)
from .encoder import (MemoryBank, MultimodalEncoder, SaliencyHead, inside_gt_mask,
                      margin_saliency_loss, negative_relation_loss, rank_contrastive_loss,
                      sample_margin_pair)
from .layers import Mlp
from .objective import (LossBreakdown, cost_matrix, hungarian_match, localization_loss,
                        quality_loss, span_iou_matrix)


@dataclass
class ModelOutput:
    memory: MemoryBank
    saliency: torch.Tensor        # (N_v,) raw scores
    locality: LocalityMemory
    states: list[DecoderState]    # one per decoding layer (initial state if none)
    offsets: list[dict]           # raw sampling offsets per layer
    qualities: list[torch.Tensor]  # (M,) per state, in (0, 1)

    @property
    def final_state(self) -> DecoderState:
        return self.states[-1]

    @property
    def final_quality(self) -> torch.Tensor:
        return self.qualities[-1]


class GroundingModel(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        self.cfg = cfg
        self.encoder = MultimodalEncoder(
            cfg.video_feat_dim, cfg.text_feat_dim, cfg.dim, cfg.heads,
            cfg.enc_layers, cfg.dropout)
        self.saliency_head = SaliencyHead(cfg.dim)
        self.locality = LocalityEnhancer(cfg.dim)
        self.decoder = DualPathwayDecoder(
            cfg.dim, cfg.heads, cfg.dec_layers, cfg.num_queries,
            cfg.num_points, cfg.dropout)
        self.quality_head = Mlp(3 * cfg.dim, cfg.dim, 1)

    def quality_scores(self, state: DecoderState) -> torch.Tensor:
        joint = torch.cat([state.c_p, state.c_s, state.c_e], dim=-1)
        return torch.sigmoid(self.quality_head(joint)).squeeze(-1)

    def forward(self, video_feats, text_feats) -> ModelOutput:
        dtype = next(self.parameters()).dtype
        video = torch.as_tensor(np.asarray(video_feats)).to(dtype)
        text = torch.as_tensor(np.asarray(text_feats)).to(dtype)
        memory = self.encoder(video, text)
        locality = self.locality(memory.memory)
        states, offsets = self.decoder(memory, locality)
        if not states:
            states = [self.decoder.initial_state()]
        return ModelOutput(
            memory=memory,
            saliency=self.saliency_head(memory.memory),
            locality=locality,
            states=states,
            offsets=offsets,
            qualities=[self.quality_scores(s) for s in states],
        )


def gt_tensor(sample: Sample, like: torch.Tensor) -> torch.Tensor:
    return like.new_tensor([[s.t_s, s.t_e] for s in sample.gt_spans])


def sample_losses(out: ModelOutput, sample: Sample, cfg: Config,
                  rng: np.random.Generator,
                  frozen: dict | None = None) -> tuple[dict, list[str]]:
    """Per-sample loss terms (excluding the batch-level negative loss).

    `frozen`, when given, pins the non-differentiable pieces (Hungarian
    assignments and stop-gradient quality targets) across repeated calls
    so that finite differences see the same piecewise-smooth function
    autograd differentiates.
    """
    skipped: list[str] = []
    gt = gt_tensor(sample, out.memory.memory)
    states = out.states if cfg.deep_supervision else out.states[-1:]
    qualities = out.qualities if cfg.deep_supervision else out.qualities[-1:]

    loc = out.memory.memory.new_zeros(())
    qual = out.memory.memory.new_zeros(())
    for idx, (state, q) in enumerate(zip(states, qualities)):
        spans = state.spans
        if frozen is None:
            costs = cost_matrix(gt, spans, cfg.l1_weight, cfg.giou_weight)
            match = hungarian_match(costs.detach().cpu().numpy())
            targets = None
        else:
            key = (sample.qid, idx)
            if key not in frozen:
                costs = cost_matrix(gt, spans, cfg.l1_weight, cfg.giou_weight)
                frozen[key] = (
                    hungarian_match(costs.detach().cpu().numpy()),
                    span_iou_matrix(gt, spans.detach()).amax(dim=0))
            match, targets = frozen[key]
        loc = loc + localization_loss(gt, spans, match, cfg.l1_weight, cfg.giou_weight)
        qual = qual + quality_loss(q, spans, gt, targets=targets)

    labels_s, labels_e = boundary_labels(
        out.memory.clip_positions, sample.gt_spans, cfg.boundary_radius_ratio)
    regul = boundary_regularization_loss(
        out.locality.start_activation, out.locality.end_activation, labels_s, labels_e)

    pair = sample_margin_pair(out.memory.clip_positions, sample.gt_spans,
                              sample.saliency_labels, rng)
    if pair is None:
        skipped.append("sal_margin")
        sal = out.saliency.new_zeros(())
    else:
        sal = margin_saliency_loss(out.saliency, [pair], cfg.margin)
    if sample.saliency_labels is not None:
        inside = inside_gt_mask(out.memory.clip_positions, sample.gt_spans)
        sal = sal + rank_contrastive_loss(out.saliency, sample.saliency_labels,
                                          inside, cfg.tau)
    else:
        skipped.append("sal_cont")

    return {"loc": loc, "qual": qual, "sal": sal, "regul": regul}, skipped


def batch_loss(model: GroundingModel, batch: list[Sample], cfg: Config,
               rng: np.random.Generator, sal_weight: float,
               frozen: dict | None = None) -> tuple[torch.Tensor, LossBreakdown]:
    """Mean-over-batch total loss plus a breakdown of the raw terms."""
    terms = {"loc": [], "qual": [], "sal": [], "regul": []}
    skipped: list[str] = []
    outputs = []
    for sample in batch:
        out = model(sample.video_feats, sample.text_feats)
        outputs.append(out)
        sample_terms, sample_skipped = sample_losses(out, sample, cfg, rng, frozen=frozen)
        for key, value in sample_terms.items():
            terms[key].append(value)
        skipped.extend(f"{sample.qid}:{s}" for s in sample_skipped)

    # negative-relation loss: rotate the batch by one to pair each video
    # with a mismatched sentence
    if len(batch) >= 2:
        for i, sample in enumerate(batch):
            neg_text = batch[(i + 1) % len(batch)].text_feats
            dtype = next(model.parameters()).dtype
            neg_memory = model.encoder(
                torch.as_tensor(np.asarray(sample.video_feats)).to(dtype),
                torch.as_tensor(np.asarray(neg_text)).to(dtype))
            terms["sal"][i] = terms["sal"][i] + negative_relation_loss(
                model.saliency_head(neg_memory.memory))
    else:
        skipped.append("sal_neg(batch<2)")

    means = {key: torch.stack(values).mean() for key, values in terms.items()}
    total = (means["loc"] + cfg.qual_weight * means["qual"]
             + sal_weight * means["sal"] + cfg.regul_weight * means["regul"])
    breakdown = LossBreakdown(
        loc=float(means["loc"].detach()), qual=float(means["qual"].detach()),
        sal=float(means["sal"].detach()), regul=float(means["regul"].detach()),
        total=float(total.detach()), skipped=skipped)
    return total, breakdown
