"""Object-level and text representations.

The object features are toy stand-ins for pretrained image/point-cloud
encoders: a learned category embedding plus a small MLP of the box
parameters, perturbed with per-scene Gaussian noise so relational evidence
stays necessary.  Real encoders can replace them behind the same tensors.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .attention import FeedForwardBlock, SelfAttentionBlock
from .config import ModelConfig
from .scenes import Box3, Scene


def box_params(box: Box3) -> list[float]:
    return [*box.center, *box.size]


def scene_box_tensor(scene: Scene, dtype=torch.float32) -> torch.Tensor:
    return torch.tensor([box_params(o.box) for o in scene.objects], dtype=dtype)


def scene_noise(scene: Scene, dim: int, sigma: float) -> np.ndarray:
    """Per-scene feature noise, a pure function of the scene seed."""
    rng = np.random.default_rng(scene.seed)
    return (sigma * rng.standard_normal((scene.n_objects, dim))).astype(np.float64)


class ToyObjectEncoder(nn.Module):
    """Category embeddings + box MLP, standing in for 2D/3D backbones."""

    def __init__(self, cfg: ModelConfig, n_categories: int):
        super().__init__()
        self.emb_3d = nn.Embedding(n_categories, cfg.dim)
        self.emb_2d = nn.Embedding(n_categories, cfg.dim_2d)
        self.box_mlp = nn.Sequential(
            nn.Linear(6, cfg.dim), nn.ReLU(), nn.Linear(cfg.dim, cfg.dim)
        )

    def forward(self, cat_idx, box6, noise):
        f3d = self.emb_3d(cat_idx) + self.box_mlp(box6) + noise
        f2d = self.emb_2d(cat_idx)
        return f2d, f3d


class FeatureFusion(nn.Module):
    """Fuse 2D features into 3D features with a residual that preserves the
    3D stream exactly when the fusion MLP is silent."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.phi = nn.Linear(cfg.dim_2d, cfg.dim)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.dim, cfg.mlp_hidden),
            nn.ReLU(),
            nn.Linear(cfg.mlp_hidden, cfg.dim),
        )

    def forward(self, f2d, f3d):
        return self.mlp(self.phi(f2d) + f3d) + f3d


class BoxEmbedding(nn.Module):
    """Linear map of (center, size) into the feature space."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(6, cfg.dim)

    def forward(self, box6):
        return self.proj(box6)


class PairwiseGeometry(nn.Module):
    """Learned projection of the raw pairwise descriptor."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(6, cfg.dim)

    def forward(self, box6):
        return self.proj(pairwise_descriptor(box6))


def pairwise_descriptor(box6: torch.Tensor) -> torch.Tensor:
    """Raw g(i, j) = [c_j - c_i (3), |c_j - c_i| (1), log(vol_i / vol_j) (1),
    signed vertical gap (1)]; the diagonal is all zeros."""
    center = box6[..., :3]
    size = box6[..., 3:]
    ci = center.unsqueeze(-2)  # (..., N, 1, 3)
    cj = center.unsqueeze(-3)  # (..., 1, N, 3)
    delta = cj - ci  # (..., N, N, 3)
    sq = (delta * delta).sum(-1, keepdim=True)
    dist = torch.sqrt(torch.clamp(sq, min=1e-24))
    dist = torch.where(sq > 0, dist, torch.zeros_like(dist))
    logvol = torch.log(size).sum(-1)
    logratio = (logvol.unsqueeze(-1) - logvol.unsqueeze(-2)).unsqueeze(-1)
    zmin = center[..., 2] - size[..., 2] / 2
    zmax = center[..., 2] + size[..., 2] / 2
    gap_up = zmin.unsqueeze(-2) - zmax.unsqueeze(-1)  # zmin_j - zmax_i
    gap_down = zmin.unsqueeze(-1) - zmax.unsqueeze(-2)  # zmin_i - zmax_j
    zero = torch.zeros_like(gap_up)
    gap = torch.where(gap_up > 0, gap_up, torch.where(gap_down > 0, -gap_down, zero))
    return torch.cat([delta, dist, logratio, gap.unsqueeze(-1)], dim=-1)


class TextEncoder(nn.Module):
    """Token embeddings + positional encoding + self-attention layers,
    mean-pooled to one holistic vector; a linear head supplies the
    target-category logits used for auxiliary supervision."""

    PAD = 0
    UNK = 1

    def __init__(self, cfg: ModelConfig, vocab_size: int, n_categories: int):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, cfg.dim, padding_idx=self.PAD)
        self.pos = nn.Embedding(cfg.max_text_len, cfg.dim)
        self.layers = nn.ModuleList()
        for _ in range(cfg.text_layers):
            self.layers.append(SelfAttentionBlock(cfg.dim, cfg.heads, cfg.dropout))
            self.layers.append(FeedForwardBlock(cfg.dim, cfg.mlp_hidden, cfg.dropout))
        self.category_head = nn.Linear(cfg.dim, n_categories)
        self.max_len = cfg.max_text_len

    def forward(self, tokens, token_mask):
        # tokens (B, L) int64, token_mask (B, L) bool
        if tokens.shape[1] > self.max_len:
            raise ValueError(f"sequence length {tokens.shape[1]} exceeds {self.max_len}")
        positions = torch.arange(tokens.shape[1], device=tokens.device)
        x = self.embed(tokens) + self.pos(positions)[None]
        for i in range(0, len(self.layers), 2):
            x = self.layers[i](x, key_mask=token_mask)
            x = self.layers[i + 1](x)
        weights = token_mask.to(x.dtype)
        denom = torch.clamp(weights.sum(-1, keepdim=True), min=1.0)
        pooled = (x * weights.unsqueeze(-1)).sum(-2) / denom
        return pooled, self.category_head(pooled)


class ObjectClassifier(nn.Module):
    """Linear category head over fused object features."""

    def __init__(self, cfg: ModelConfig, n_categories: int):
        super().__init__()
        self.proj = nn.Linear(cfg.dim, n_categories)

    def forward(self, features):
        return self.proj(features)
