"""Multi-head attention blocks shared by the encoders, the relational
modules, and the graph network.

All blocks are post-norm: LayerNorm(x + Dropout(Attention(x, ...))).  Rows
whose key set is fully masked receive a zero attention update, so the block
degrades to LayerNorm(x) instead of propagating NaNs.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim={dim} not divisible by heads={heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self,
        queries: torch.Tensor,  # (B, R, C)
        context: torch.Tensor,  # (B, S, C)
        key_mask: torch.Tensor | None = None,  # (B, S) bool, True = attend
    ) -> torch.Tensor:
        b, r, _ = queries.shape
        s = context.shape[1]
        h, d = self.heads, self.head_dim
        q = self.q_proj(queries).view(b, r, h, d).transpose(1, 2)
        k = self.k_proj(context).view(b, s, h, d).transpose(1, 2)
        v = self.v_proj(context).view(b, s, h, d).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)  # (B, H, R, S)
        if key_mask is not None:
            blocked = ~key_mask[:, None, None, :]
            scores = scores.masked_fill(blocked, torch.finfo(scores.dtype).min)
        attn = torch.softmax(scores, dim=-1)
        if key_mask is not None:
            # fully-masked key sets: suppress the whole update (bias included)
            has_key = key_mask.any(dim=-1)[:, None, None, None]
            attn = attn * has_key
        out = (attn @ v).transpose(1, 2).reshape(b, r, self.dim)
        out = self.out_proj(out)
        if key_mask is not None:
            out = out * key_mask.any(dim=-1)[:, None, None]
        return out


class CrossAttentionBlock(nn.Module):
    """Cross-attention with residual and layer normalization around it."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads)
        self.drop = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x, context, key_mask=None):
        return self.norm(x + self.drop(self.attn(x, context, key_mask)))


def cross_attend(queries: torch.Tensor, text: torch.Tensor, block: CrossAttentionBlock) -> torch.Tensor:
    """Attend a query set to the holistic text feature as a one-token sequence.

    `queries` is (R, C) or (B, R, C); `text` is (C,) or (B, C).
    """
    squeeze = queries.dim() == 2
    if squeeze:
        queries = queries[None]
    if text.dim() == 1:
        text = text[None]
    out = block(queries, text[:, None, :])
    return out[0] if squeeze else out


class SelfAttentionBlock(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads)
        self.drop = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x, key_mask=None):
        return self.norm(x + self.drop(self.attn(x, x, key_mask)))


class FeedForwardBlock(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, dim))
        self.drop = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        return self.norm(x + self.drop(self.net(x)))
