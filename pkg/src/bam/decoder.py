"""Dual-pathway decoder.

Each layer first updates the anchor point via query self-attention and
global cross-attention over the memory, then updates the two boundary
distances via deformable sampling on locality-enhanced memory. All three
quantities are refined in sigmoid space so they stay in (0, 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .encoder import MemoryBank
from .layers import (FeedForward, Mlp, attention, inverse_sigmoid, sigmoid_refine,
                     sinusoidal_encoding)


@dataclass
class LocalityMemory:
    """Memory concatenated with boundary-sensitive conv features."""

    start_memory: torch.Tensor     # (N_v, 2D)
    end_memory: torch.Tensor       # (N_v, 2D)
    start_activation: torch.Tensor  # (N_v,) in (0, 1)
    end_activation: torch.Tensor    # (N_v,) in (0, 1)


@dataclass
class DecoderState:
    """Per-layer queries and the (p, d_s, d_e) predictions."""

    c_p: torch.Tensor      # (M, D)
    c_s: torch.Tensor      # (M, D)
    c_e: torch.Tensor      # (M, D)
    triplets: torch.Tensor  # (M, 3) columns p, d_s, d_e, each in (0, 1)

    @property
    def spans(self) -> torch.Tensor:
        """Unclamped spans (p - d_s, p + d_e), shape (M, 2)."""
        p, d_s, d_e = self.triplets.unbind(-1)
        return torch.stack([p - d_s, p + d_e], dim=-1)


def boundary_labels(clip_positions: torch.Tensor, gt_spans,
                    radius_ratio: float = 0.1) -> tuple[torch.Tensor, torch.Tensor]:
    """Binary start/end neighborhood labels per clip.

    A clip is positive for a side when it lies within radius_ratio of the
    moment length from that side's boundary, unioned over ground truths.
    """
    g_s = torch.zeros_like(clip_positions)
    g_e = torch.zeros_like(clip_positions)
    for span in gt_spans:
        radius = radius_ratio * (span.t_e - span.t_s)
        g_s = torch.maximum(g_s, ((clip_positions - span.t_s).abs() <= radius).to(g_s.dtype))
        g_e = torch.maximum(g_e, ((clip_positions - span.t_e).abs() <= radius).to(g_e.dtype))
    return g_s, g_e


class ConvStack(nn.Module):
    """Two 1D convolutions (kernel 3, same width) with ReLU between."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, dim, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(dim, dim, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (N_v, D) treated as a length-N_v sequence
        h = x.t().unsqueeze(0)
        h = self.conv2(torch.relu(self.conv1(h)))
        return h.squeeze(0).t()


class LocalityEnhancer(nn.Module):
    """Builds boundary-sensitive features and the enhanced memories."""

    def __init__(self, dim: int):
        super().__init__()
        self.start_convs = ConvStack(dim)
        self.end_convs = ConvStack(dim)

    def forward(self, memory: torch.Tensor) -> LocalityMemory:
        feats_s = self.start_convs(memory)
        feats_e = self.end_convs(memory)
        return LocalityMemory(
            start_memory=torch.cat([memory, feats_s], dim=-1),
            end_memory=torch.cat([memory, feats_e], dim=-1),
            start_activation=torch.sigmoid(feats_s).mean(dim=-1),
            end_activation=torch.sigmoid(feats_e).mean(dim=-1),
        )


def boundary_regularization_loss(activation_s: torch.Tensor, activation_e: torch.Tensor,
                                 labels_s: torch.Tensor, labels_e: torch.Tensor,
                                 eps: float = 1e-6) -> torch.Tensor:
    """Clip-averaged BCE on boundary activations, summed over both sides."""
    total = activation_s.new_zeros(())
    for act, lab in ((activation_s, labels_s), (activation_e, labels_e)):
        a = act.clamp(eps, 1.0 - eps)
        total = total - (lab * torch.log(a) + (1.0 - lab) * torch.log(1.0 - a)).mean()
    return total


def sample_memory(enhanced: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
    """Linearly interpolate memory rows at normalized positions.

    A position maps to the fractional row coordinate position * (N_v - 1);
    positions outside [0, 1] clamp to the endpoint rows.
    """
    n = enhanced.shape[0]
    coord = positions.clamp(0.0, 1.0) * (n - 1)
    lo = coord.floor().long().clamp(0, n - 1)
    hi = (lo + 1).clamp(0, n - 1)
    frac = (coord - lo.to(coord.dtype)).unsqueeze(-1)
    return enhanced[lo] * (1.0 - frac) + enhanced[hi] * frac


class BoundarySide(nn.Module):
    """Deformable neighbor aggregation and distance refinement for one side."""

    def __init__(self, dim: int, num_points: int, dropout: float = 0.0):
        super().__init__()
        self.offset_fc = nn.Linear(dim, num_points)
        self.weight_fc = nn.Linear(dim, num_points)
        # start with content-independent sampling: a small symmetric fan of
        # points around the boundary, attended uniformly
        nn.init.zeros_(self.offset_fc.weight)
        nn.init.zeros_(self.weight_fc.weight)
        nn.init.zeros_(self.weight_fc.bias)
        with torch.no_grad():
            self.offset_fc.bias.copy_(torch.linspace(-0.05, 0.05, num_points))
        self.sample_proj = nn.Linear(2 * dim, dim)
        self.ffn = FeedForward(dim, dropout=dropout)
        self.delta_mlp = Mlp(dim, dim, 1)

    def forward(self, queries: torch.Tensor, origin: torch.Tensor,
                enhanced: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns updated queries and the raw offsets (M, K)."""
        offsets = self.offset_fc(queries)
        weights = torch.softmax(self.weight_fc(queries), dim=-1)
        positions = origin.unsqueeze(-1) + offsets
        sampled = sample_memory(enhanced, positions.reshape(-1))
        sampled = self.sample_proj(sampled).reshape(*offsets.shape, -1)
        aggregated = (weights.unsqueeze(-1) * sampled).sum(dim=1) + queries
        return self.ffn(aggregated), offsets


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, num_points: int, dropout: float = 0.0):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.span_pe_mlp = Mlp(3 * dim, dim, dim)
        self.self_q = nn.Linear(dim, dim)
        self.self_k = nn.Linear(dim, dim)
        self.self_v = nn.Linear(dim, dim)
        self.cross_q = nn.Linear(dim, dim)
        self.cross_k = nn.Linear(dim, dim)
        self.cross_v = nn.Linear(dim, dim)
        self.anchor_ffn = FeedForward(dim, dropout=dropout)
        self.anchor_delta = Mlp(dim, dim, 1)
        self.start_side = BoundarySide(dim, num_points, dropout)
        self.end_side = BoundarySide(dim, num_points, dropout)
        self.attn_dropout = nn.Dropout(dropout)

    def span_positional(self, triplets: torch.Tensor) -> torch.Tensor:
        # point-wise sinusoidal encoding of each of p, d_s, d_e, then MLP to D
        enc = sinusoidal_encoding(triplets, self.dim)  # (M, 3, D)
        return self.span_pe_mlp(enc.flatten(-2))

    def anchor_self_attention(self, c_p: torch.Tensor, triplets: torch.Tensor) -> torch.Tensor:
        pos = self.span_positional(triplets)
        q = self.self_q(c_p) + pos
        k = self.self_k(c_p) + pos
        v = self.self_v(c_p)
        return attention(q, k, v, self.heads, self.attn_dropout) + c_p

    def anchor_cross_attention(self, c_p: torch.Tensor, anchors: torch.Tensor,
                               memory: MemoryBank) -> torch.Tensor:
        # concatenated positional encodings widen queries/keys to 2D,
        # so the logits are scaled by sqrt(2D)
        q = torch.cat([self.cross_q(c_p), sinusoidal_encoding(anchors, self.dim)], dim=-1)
        k = torch.cat([self.cross_k(memory.memory), memory.positional_enc], dim=-1)
        v = self.cross_v(memory.memory)
        return attention(q, k, v, self.heads, self.attn_dropout) + c_p

    def forward(self, state: DecoderState, memory: MemoryBank,
                locality: LocalityMemory) -> tuple[DecoderState, dict]:
        p, d_s, d_e = state.triplets.unbind(-1)

        # anchor pathway
        c_p = self.anchor_self_attention(state.c_p, state.triplets)
        c_p = self.anchor_cross_attention(c_p, p, memory)
        c_p = self.anchor_ffn(c_p) + c_p
        delta_p = self.anchor_delta(c_p).squeeze(-1)
        p_new = sigmoid_refine(p, delta_p)

        # boundary pathway, origins use the updated anchor
        c_s, offsets_s = self.start_side(state.c_s, p_new - d_s, locality.start_memory)
        c_e, offsets_e = self.end_side(state.c_e, p_new + d_e, locality.end_memory)
        d_s_new = sigmoid_refine(d_s, self.start_side.delta_mlp(c_s).squeeze(-1))
        d_e_new = sigmoid_refine(d_e, self.end_side.delta_mlp(c_e).squeeze(-1))

        new_state = DecoderState(
            c_p=c_p, c_s=c_s, c_e=c_e,
            triplets=torch.stack([p_new, d_s_new, d_e_new], dim=-1))
        return new_state, {"start_offsets": offsets_s, "end_offsets": offsets_e}


def _initial_span_logits(num_queries: int) -> torch.Tensor:
    p = (torch.arange(num_queries, dtype=torch.float64) + 0.5) / num_queries
    d = torch.full((num_queries,), 0.05, dtype=torch.float64)
    logits = torch.stack([p, d, d], dim=-1)
    return (torch.log(logits) - torch.log1p(-logits)).to(torch.get_default_dtype())


class DualPathwayDecoder(nn.Module):
    """Stack of dual-pathway layers over learnable initial queries/spans."""

    def __init__(self, dim: int, heads: int, layers: int, num_queries: int,
                 num_points: int, dropout: float = 0.0):
        super().__init__()
        self.layers = nn.ModuleList(
            DecoderLayer(dim, heads, num_points, dropout) for _ in range(layers))
        self.init_c_p = nn.Parameter(torch.randn(num_queries, dim) * 0.02)
        self.init_c_s = nn.Parameter(torch.randn(num_queries, dim) * 0.02)
        self.init_c_e = nn.Parameter(torch.randn(num_queries, dim) * 0.02)
        # spans live in inverse-sigmoid space: anchors spread over the
        # video, small initial widths
        self.init_span_logits = nn.Parameter(_initial_span_logits(num_queries))

    def initial_state(self) -> DecoderState:
        return DecoderState(
            c_p=self.init_c_p, c_s=self.init_c_s, c_e=self.init_c_e,
            triplets=torch.sigmoid(self.init_span_logits))

    def forward(self, memory: MemoryBank, locality: LocalityMemory
                ) -> tuple[list[DecoderState], list[dict]]:
        """Returns per-layer states and their raw sampling offsets."""
        state = self.initial_state()
        states, offsets = [], []
        for layer in self.layers:
            state, layer_offsets = layer(state, memory, locality)
            states.append(state)
            offsets.append(layer_offsets)
        return states, offsets
