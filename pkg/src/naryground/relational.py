"""Progressive relational scoring: text-guided binary pair scores, top-K1
selection, n-ary combination scores over selected pairs, and the grouped
supervision losses.

Selection is discrete and runs on detached scores; gradients flow through the
gathered feature rows and through the losses.  All tie-breaking is
lexicographic on indices so results are reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .attention import CrossAttentionBlock
from .config import ConfigError, ModelConfig

LOG_EPS = 1e-7


@dataclass
class BinaryRelationState:
    o_prime: torch.Tensor  # (B, N, C)
    relation: torch.Tensor  # (B, N, N, C) pairwise relation vectors
    s1: torch.Tensor  # (B, N, N) scores in (0, 1)
    topk1: list[list[tuple[int, int]]]  # per sample, K1 ordered (i, j) pairs


@dataclass
class DedupCombo:
    cell: tuple[int, int]  # (p, q) upper-triangle cell holding the best score
    mask: int  # object-id bitmask of the combination
    score: float

    @property
    def objects(self) -> frozenset[int]:
        out = []
        m = self.mask
        while m:
            lsb = m & -m
            out.append(lsb.bit_length() - 1)
            m ^= lsb
        return frozenset(out)

    def contains(self, object_id: int) -> bool:
        return bool(self.mask >> object_id & 1)


@dataclass
class NaryRelationState:
    b_prime: torch.Tensor  # (B, K1, C)
    m: torch.Tensor  # (B, K1, K1, C)
    s2: torch.Tensor  # (B, K1, K1)
    combos: list[list[list[frozenset[int]]]]  # per sample, K1 x K1 object sets
    dedup: list[list[DedupCombo]]  # per sample, deduplicated upper triangle
    topk2: list[list[DedupCombo]]  # per sample, K2 best combinations


class ScoreMLP(nn.Module):
    """Two-layer score head with sigmoid output."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, x):
        return torch.sigmoid(self.net(x)).squeeze(-1)


class BinaryRelationModule(nn.Module):
    """Text-attended object features and pairwise relation scores."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cross = CrossAttentionBlock(cfg.dim, cfg.heads, cfg.dropout)
        self.score = ScoreMLP(cfg.dim, cfg.mlp_hidden)

    def forward(self, objects, f_box, f_geo, text):
        # objects (B, N, C), f_box (B, N, C), f_geo (B, N, N, C), text (B, C)
        o_prime = self.cross(objects + f_box, text[:, None, :])
        relation = o_prime.unsqueeze(2) * o_prime.unsqueeze(1) + f_geo
        s1 = self.score(relation)
        return o_prime, relation, s1


class NaryRelationModule(nn.Module):
    """Text-attended selected-pair features and combination scores."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cross = CrossAttentionBlock(cfg.dim, cfg.heads, cfg.dropout)
        self.score = ScoreMLP(cfg.dim, cfg.mlp_hidden)

    def forward(self, selected, text):
        # selected (B, K1, C), text (B, C)
        b_prime = self.cross(selected, text[:, None, :])
        m = b_prime.unsqueeze(2) * b_prime.unsqueeze(1)
        s2 = self.score(m)
        return b_prime, m, s2


# --- discrete selection ------------------------------------------------------


def select_top_pairs(s1: np.ndarray, k1: int) -> list[tuple[int, int]]:
    """K1 highest-scoring off-diagonal ordered pairs; ties break on (i, j)."""
    n = s1.shape[0]
    if k1 > n * (n - 1):
        raise ConfigError(f"k1={k1} exceeds ordered pair count {n * (n - 1)}")
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    order = np.lexsort((jj, ii, -s1[ii, jj]))
    return [(int(ii[o]), int(jj[o])) for o in order[:k1]]


def force_target_pair(
    pairs: list[tuple[int, int]], s1: np.ndarray, target_id: int
) -> list[tuple[int, int]]:
    """Training-time guarantee that some selected pair touches the target:
    replace the lowest-ranked pair with the best target-containing one."""
    if any(target_id in pair for pair in pairs):
        return pairs
    n = s1.shape[0]
    best = None
    for i in range(n):
        for j in range(n):
            if i == j or (i != target_id and j != target_id):
                continue
            key = (-s1[i, j], i, j)
            if best is None or key < best[0]:
                best = (key, (i, j))
    assert best is not None
    return pairs[:-1] + [best[1]]


def combo_sets(pairs: Sequence[tuple[int, int]]) -> list[list[frozenset[int]]]:
    """K1 x K1 map of object-id unions; entry (p, q) covers 2 to 4 objects."""
    k = len(pairs)
    return [
        [frozenset(pairs[p]) | frozenset(pairs[q]) for q in range(k)]
        for p in range(k)
    ]


def dedup_combos(s2: np.ndarray, pairs: Sequence[tuple[int, int]]) -> list[DedupCombo]:
    """Deduplicate the upper triangle (diagonal included) by object set,
    keeping each set's best-scoring cell; sorted by (-score, p, q)."""
    k = len(pairs)
    pair_masks = np.zeros(k, dtype=np.int64)
    for idx, (i, j) in enumerate(pairs):
        pair_masks[idx] = (1 << i) | (1 << j)
    pp, qq = np.triu_indices(k)
    masks = pair_masks[pp] | pair_masks[qq]
    scores = s2[pp, qq]
    order = np.lexsort((qq, pp, -scores))
    seen: set[int] = set()
    combos = []
    for o in order:
        mask = int(masks[o])
        if mask in seen:
            continue
        seen.add(mask)
        combos.append(
            DedupCombo(cell=(int(pp[o]), int(qq[o])), mask=mask, score=float(scores[o]))
        )
    return combos


def select_top_combos(dedup: Sequence[DedupCombo], k2: int) -> list[DedupCombo]:
    if k2 > len(dedup):
        raise ConfigError(
            f"k2={k2} exceeds {len(dedup)} deduplicated combinations"
        )
    return list(dedup[:k2])


def force_target_combo(
    selected: list[DedupCombo], dedup: Sequence[DedupCombo], target_id: int
) -> list[DedupCombo]:
    """Training-time guarantee that the graph will contain the target."""
    if any(c.contains(target_id) for c in selected):
        return selected
    for combo in dedup:  # dedup is sorted best-first
        if combo.contains(target_id):
            return selected[:-1] + [combo]
    return selected


def group_combos(
    combos: Sequence[DedupCombo] | Sequence[frozenset[int]], target_id: int
) -> tuple[list[int], list[int]]:
    """Partition combination indices into (with target, without target)."""
    pos, neg = [], []
    for idx, combo in enumerate(combos):
        if isinstance(combo, DedupCombo):
            hit = combo.contains(target_id)
        else:
            hit = target_id in combo
        (pos if hit else neg).append(idx)
    return pos, neg


# --- losses -------------------------------------------------------------------


def binary_loss(
    s1: torch.Tensor, labels: torch.Tensor, mask_diagonal: bool = False
) -> torch.Tensor:
    """Mean binary cross-entropy over all N x N cells (diagonal labelled 0
    unless masked out entirely)."""
    s = torch.clamp(s1, LOG_EPS, 1.0 - LOG_EPS)
    cell = -(labels * torch.log(s) + (1.0 - labels) * torch.log(1.0 - s))
    if mask_diagonal:
        n = s1.shape[-1]
        off = ~torch.eye(n, dtype=torch.bool, device=s1.device)
        return cell.masked_select(off.expand_as(cell)).mean()
    return cell.mean()


def nary_loss(
    scores: torch.Tensor, pos: Sequence[int], neg: Sequence[int]
) -> torch.Tensor:
    """Grouped supervision: negatives pushed to 0, best positive pulled to 1.

    `scores` is a 1-D tensor over combinations; `pos` must be nonempty."""
    if len(pos) == 0:
        raise ValueError("positive group is empty; teacher forcing should prevent this")
    s = torch.clamp(scores, LOG_EPS, 1.0 - LOG_EPS)
    idx_pos = torch.as_tensor(list(pos), dtype=torch.long, device=scores.device)
    # dim-reduction max routes the (sub)gradient to the first maximal entry
    loss = -torch.log(s[idx_pos].max(dim=0).values)
    if len(neg) > 0:
        idx_neg = torch.as_tensor(list(neg), dtype=torch.long, device=scores.device)
        loss = loss - torch.log(1.0 - s[idx_neg]).mean()
    return loss


def nary_loss_batched(
    s2: torch.Tensor,
    dedup_lists: Sequence[Sequence[DedupCombo]],
    targets: Sequence[int],
) -> torch.Tensor:
    """Batch mean of `nary_loss` over per-sample deduplicated combinations,
    computed with padded gathers instead of a per-sample loop."""
    b = s2.shape[0]
    width = max(len(d) for d in dedup_lists)
    cp = np.zeros((b, width), dtype=np.int64)
    cq = np.zeros((b, width), dtype=np.int64)
    pos_mask = np.zeros((b, width), dtype=bool)
    neg_mask = np.zeros((b, width), dtype=bool)
    for i, dedup in enumerate(dedup_lists):
        if not any(c.contains(targets[i]) for c in dedup):
            raise ValueError(
                "positive group is empty; teacher forcing should prevent this"
            )
        for j, combo in enumerate(dedup):
            cp[i, j], cq[i, j] = combo.cell
            if combo.contains(targets[i]):
                pos_mask[i, j] = True
            else:
                neg_mask[i, j] = True
    device = s2.device
    rows = torch.arange(b, device=device)[:, None]
    scores = s2[rows, torch.from_numpy(cp).to(device), torch.from_numpy(cq).to(device)]
    scores = torch.clamp(scores, LOG_EPS, 1.0 - LOG_EPS)
    t_pos = torch.from_numpy(pos_mask).to(device)
    t_neg = torch.from_numpy(neg_mask).to(device)
    neg_count = torch.clamp(t_neg.sum(-1), min=1)
    neg_term = -(torch.log(1.0 - scores) * t_neg).sum(-1) / neg_count
    pos_best = torch.where(t_pos, scores, torch.full_like(scores, -1.0)).max(-1).values
    return (neg_term - torch.log(pos_best)).mean()


def gather_pair_features(relation: torch.Tensor, pairs: Sequence[tuple[int, int]]) -> torch.Tensor:
    """Select rows of a (N, N, C) relation map for one sample's pairs."""
    ii = torch.as_tensor([p[0] for p in pairs], dtype=torch.long, device=relation.device)
    jj = torch.as_tensor([p[1] for p in pairs], dtype=torch.long, device=relation.device)
    return relation[ii, jj]
