"""Shared building blocks: sinusoidal encodings, attention, feed-forward nets.

The attention here follows the formulation used throughout the model:
values are aggregated directly (no output projection) and the logits are
scaled by the square root of the *total* key width, which keeps the
single-head equations valid verbatim in the multi-head case.
"""
from __future__ import annotations

import math

import torch
from torch import nn

POSITION_SCALE = 2.0 * math.pi


def sinusoidal_encoding(positions: torch.Tensor, dim: int, temperature: float = 10000.0) -> torch.Tensor:
    """Fixed sinusoidal encoding of normalized positions.

    positions: (...,) tensor of reals (normalized times in [0, 1] by
    convention; out-of-range values are encoded as-is). Returns
    (..., dim) with interleaved sin/cos. dim must be even.
    """
    if dim % 2 != 0:
        raise ValueError(f"encoding dim must be even, got {dim}")
    device, dtype = positions.device, positions.dtype
    half = dim // 2
    freq = temperature ** (-torch.arange(half, device=device, dtype=dtype) * 2.0 / dim)
    angles = positions.unsqueeze(-1) * POSITION_SCALE * freq
    enc = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
    return enc.flatten(-2)


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    # (n, d) -> (heads, n, d // heads)
    n, d = x.shape
    return x.view(n, heads, d // heads).transpose(0, 1)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int,
              dropout: nn.Dropout | None = None) -> torch.Tensor:
    """Multi-head softmax attention, logits scaled by sqrt(total key width).

    q: (M, Dk), k: (N, Dk), v: (N, Dv) -> (M, Dv). Dk and Dv must be
    divisible by `heads`.
    """
    scale = 1.0 / math.sqrt(q.shape[-1])
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    weights = torch.softmax(qh @ kh.transpose(-1, -2) * scale, dim=-1)
    if dropout is not None:
        weights = dropout(weights)
    out = weights @ vh
    return out.transpose(0, 1).reshape(q.shape[0], -1)


class FeedForward(nn.Module):
    """Two affine layers with ReLU, hidden width 4x by convention."""

    def __init__(self, dim: int, hidden: int | None = None, dropout: float = 0.0):
        super().__init__()
        hidden = hidden if hidden is not None else 4 * dim
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.dropout(self.fc2(self.dropout(torch.relu(self.fc1(x)))))


class AttentionBlock(nn.Module):
    """Attention + residual, then FFN + residual.

    Positional encodings, when given, are added to the query/key inputs
    before projection; values stay position-free.
    """

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.ffn = FeedForward(dim, dropout=dropout)
        self.attn_dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, kv: torch.Tensor,
                x_pe: torch.Tensor | None = None, kv_pe: torch.Tensor | None = None) -> torch.Tensor:
        q_in = x if x_pe is None else x + x_pe
        k_in = kv if kv_pe is None else kv + kv_pe
        q = self.q_proj(q_in)
        k = self.k_proj(k_in)
        v = self.v_proj(kv)
        attended = attention(q, k, v, self.heads, self.attn_dropout) + x
        return self.ffn(attended) + attended


class Mlp(nn.Module):
    """Two-layer perceptron with ReLU."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(x)))


def inverse_sigmoid(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    x = x.clamp(eps, 1.0 - eps)
    return torch.log(x) - torch.log1p(-x)


def sigmoid_refine(value: torch.Tensor, delta: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Update a (0,1) quantity in inverse-sigmoid space; the final clamp
    keeps saturated values strictly inside the unit interval."""
    return torch.sigmoid(inverse_sigmoid(value, eps) + delta).clamp(eps, 1.0 - eps)
