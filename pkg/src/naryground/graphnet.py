"""Scene-graph construction from selected n-ary combinations and the
graph-structured multi-modal grounding network.

The network alternates (1) self-attention that fuses the selected binary
relation features into the node set, (2) cross-attention with the text
feature, and (3) topology-masked graph attention; the graph attention
aggregation runs exactly twice per forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .attention import CrossAttentionBlock, SelfAttentionBlock
from .config import ModelConfig


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple[int, ...]  # object ids, ascending
    edges: frozenset[tuple[int, int]]  # undirected, stored as (lo, hi)
    node_index: dict  # object id -> node position

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def build_scene_graph(combos: Iterable[frozenset[int]]) -> SceneGraph:
    """Nodes are the union of combination object sets; each combination
    contributes a clique of undirected edges."""
    combos = list(combos)
    if not combos:
        raise ValueError("cannot build a scene graph from zero combinations")
    nodes = tuple(sorted(set().union(*combos)))
    edges = set()
    for combo in combos:
        members = sorted(combo)
        for a_pos in range(len(members)):
            for b_pos in range(a_pos + 1, len(members)):
                edges.add((members[a_pos], members[b_pos]))
    return SceneGraph(
        nodes=nodes,
        edges=frozenset(edges),
        node_index={obj: pos for pos, obj in enumerate(nodes)},
    )


def graph_masks(graph: SceneGraph, n_objects: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense (node_mask, adjacency) over all N object slots."""
    node_mask = np.zeros(n_objects, dtype=bool)
    node_mask[list(graph.nodes)] = True
    adj = np.zeros((n_objects, n_objects), dtype=bool)
    for a, b in graph.edges:
        adj[a, b] = True
        adj[b, a] = True
    return node_mask, adj


def complete_graph(n_objects: int) -> SceneGraph:
    nodes = tuple(range(n_objects))
    edges = frozenset((a, b) for a in nodes for b in nodes if a < b)
    return SceneGraph(nodes=nodes, edges=edges, node_index={o: o for o in nodes})


class GraphAttentionLayer(nn.Module):
    """Masked multi-head graph attention; per-head outputs pass the
    nonlinearity before concatenation.  Nodes without neighbours (and slots
    outside the graph) pass through unchanged.

    The pairwise score keeps the nonlinearity inside the scoring function so
    coefficients genuinely depend on the querying node (an additive
    post-nonlinearity score collapses to the same ranking for every query,
    which freezes learning on densely connected graphs)."""

    def __init__(self, cfg: ModelConfig, negative_slope: float = 0.2):
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.dim // cfg.heads
        self.proj_src = nn.Linear(cfg.dim, cfg.dim, bias=False)
        self.proj_dst = nn.Linear(cfg.dim, cfg.dim, bias=False)
        self.att = nn.Parameter(torch.empty(cfg.heads, self.head_dim))
        nn.init.xavier_uniform_(self.att)
        self.leaky = nn.LeakyReLU(negative_slope)
        self.act = nn.ELU()
        self.self_loop = cfg.gat_self_loop
        self.aggregations = 0  # instrumentation: counts forward aggregations

    def forward(self, x, adj, node_mask=None):
        # x (B, N, C), adj (B, N, N) bool, node_mask (B, N) bool
        b, n, c = x.shape
        h, d = self.heads, self.head_dim
        neigh = adj
        if self.self_loop:
            eye = torch.eye(n, dtype=torch.bool, device=x.device)[None]
            if node_mask is not None:
                eye = eye & node_mask[:, :, None]
            neigh = neigh | eye
        src = self.proj_src(x).view(b, n, h, d).permute(0, 2, 1, 3)  # (B, H, N, d)
        dst = self.proj_dst(x).view(b, n, h, d).permute(0, 2, 1, 3)
        # pairwise score e[i, j] = a . leaky(src_i + dst_j)
        pair = self.leaky(src[:, :, :, None, :] + dst[:, :, None, :, :])
        e = (pair * self.att[None, :, None, None, :]).sum(-1)  # (B, H, N, N)
        e = e.masked_fill(~neigh[:, None, :, :], torch.finfo(e.dtype).min)
        alpha = torch.softmax(e, dim=-1)  # (B, H, N, N)
        has_neighbor = neigh.any(dim=-1)  # (B, N)
        alpha = alpha * has_neighbor[:, None, :, None]
        out = alpha @ dst  # (B, H, N, d): sum_j alpha_ij W v_j
        out = self.act(out)
        out = out.permute(0, 2, 1, 3).reshape(b, n, c)
        out = torch.where(has_neighbor[:, :, None], out, x)
        self.aggregations += 1
        return out


class GroundingNetwork(nn.Module):
    """Fig.-style hybrid-attention pipeline over graph nodes, ending in a
    per-node confidence head."""

    STAGES = 2

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fuse = nn.ModuleList(
            SelfAttentionBlock(cfg.dim, cfg.heads, cfg.dropout) for _ in range(self.STAGES)
        )
        self.cross = nn.ModuleList(
            CrossAttentionBlock(cfg.dim, cfg.heads, cfg.dropout) for _ in range(self.STAGES)
        )
        self.gat = nn.ModuleList(GraphAttentionLayer(cfg) for _ in range(self.STAGES))
        # skip path around the aggregation keeps node identity on dense graphs
        self.gat_norm = nn.ModuleList(nn.LayerNorm(cfg.dim) for _ in range(self.STAGES))
        self.head = nn.Sequential(
            nn.Linear(cfg.dim, cfg.mlp_hidden), nn.ReLU(), nn.Linear(cfg.mlp_hidden, 1)
        )

    def gat_aggregations(self) -> int:
        return sum(layer.aggregations for layer in self.gat)

    def forward(self, node_feats, node_mask, adj, text, rel_feats=None, rel_mask=None):
        # node_feats (B, N, C); node_mask (B, N); adj (B, N, N); text (B, C)
        # rel_feats (B, K, C) selected binary relation features, or None
        b, n, _ = node_feats.shape
        x = node_feats
        keep = node_mask[:, :, None]
        for stage in range(self.STAGES):
            if rel_feats is not None:
                tokens = torch.cat([x, rel_feats], dim=1)
                if rel_mask is None:
                    rel_mask = torch.ones(
                        rel_feats.shape[:2], dtype=torch.bool, device=x.device
                    )
                key_mask = torch.cat([node_mask, rel_mask], dim=1)
            else:
                tokens = x
                key_mask = node_mask
            fused = self.fuse[stage](tokens, key_mask=key_mask)[:, :n]
            x = torch.where(keep, fused, x)
            attended = self.cross[stage](x, text[:, None, :])
            x = torch.where(keep, attended, x)
            x = self.gat_norm[stage](x + self.gat[stage](x, adj, node_mask))
        return self.head(x).squeeze(-1)  # (B, N) raw confidences


def masked_confidences(conf: torch.Tensor, node_mask: torch.Tensor) -> torch.Tensor:
    return conf.masked_fill(~node_mask, torch.finfo(conf.dtype).min)


def predict_object(conf: torch.Tensor, node_mask: torch.Tensor) -> torch.Tensor:
    """Argmax over graph members; ties resolve to the lowest object id."""
    return masked_confidences(conf, node_mask).argmax(dim=-1)


def grounding_loss(
    conf: torch.Tensor,
    node_mask: torch.Tensor,
    target_idx: torch.Tensor,
    over_all_objects: bool = False,
) -> torch.Tensor:
    """Cross-entropy of the node-confidence softmax against the target slot."""
    member = node_mask.gather(1, target_idx[:, None]).squeeze(1)
    if not bool(member.all()):
        raise ValueError("target not in graph; teacher forcing should prevent this")
    logits = conf if over_all_objects else masked_confidences(conf, node_mask)
    return nn.functional.cross_entropy(logits, target_idx)
