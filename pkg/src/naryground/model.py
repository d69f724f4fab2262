"""End-to-end grounding model: encoders, progressive relational scoring,
scene-graph construction, and the graph grounding network, with the ablation
variants used for comparison runs.

Ablations:
  * full            — binary + n-ary scoring; graph from top-K2 combinations
  * binary_only     — binary scoring only; graph from top-K1 pairs
  * fully_connected — no relational scoring/losses; complete scene graph
  * no_graph        — confidence head directly on text-attended objects
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .encoders import (
    BoxEmbedding,
    FeatureFusion,
    ObjectClassifier,
    PairwiseGeometry,
    TextEncoder,
    ToyObjectEncoder,
)
from .graphnet import (
    GroundingNetwork,
    SceneGraph,
    build_scene_graph,
    complete_graph,
    graph_masks,
    grounding_loss,
    predict_object,
)
from .relational import (
    BinaryRelationModule,
    DedupCombo,
    NaryRelationModule,
    binary_loss,
    dedup_combos,
    force_target_combo,
    force_target_pair,
    nary_loss_batched,
    select_top_combos,
    select_top_pairs,
)


@dataclass
class ForwardOutput:
    confidences: torch.Tensor  # (B, N) raw per-object confidences
    node_mask: torch.Tensor  # (B, N) bool, graph membership
    predictions: torch.Tensor  # (B,) predicted object ids
    text_logits: torch.Tensor  # (B, |vocab|)
    losses: dict = field(default_factory=dict)  # empty outside training
    s1: torch.Tensor | None = None
    s2: torch.Tensor | None = None
    topk1: list | None = None
    dedup: list | None = None
    topk2: list | None = None
    graphs: list[SceneGraph] | None = None


class GroundingModel(nn.Module):
    def __init__(
        self,
        cfg: ModelConfig,
        category_vocab: tuple[str, ...],
        token_vocab: tuple[str, ...],
        ablation: str = "full",
    ):
        super().__init__()
        self.cfg = cfg
        self.category_vocab = tuple(category_vocab)
        self.token_vocab = tuple(token_vocab)
        self.ablation = ablation
        # ablation knob: compute the grounding loss over all object slots
        self.lref_over_all_objects = False
        n_cat = len(self.category_vocab)
        # token ids 0/1 are reserved for padding/unknown
        vocab_size = len(self.token_vocab) + 2

        self.toy = ToyObjectEncoder(cfg, n_cat)
        self.fusion = FeatureFusion(cfg)
        self.box_embed = BoxEmbedding(cfg)
        self.geometry = PairwiseGeometry(cfg)
        self.text_encoder = TextEncoder(cfg, vocab_size, n_cat)
        self.object_classifier = ObjectClassifier(cfg, n_cat)
        self.binary = BinaryRelationModule(cfg)
        self.nary = NaryRelationModule(cfg)
        self.grounding = GroundingNetwork(cfg)
        self.direct_head = nn.Sequential(
            nn.Linear(cfg.dim, cfg.mlp_hidden), nn.ReLU(), nn.Linear(cfg.mlp_hidden, 1)
        )

    # -- single-utterance conveniences (tests, inspection) --

    def encode_text(self, text: str) -> tuple[torch.Tensor, torch.Tensor]:
        from .data import encode_tokens

        tokens, mask = encode_tokens([text], self.token_vocab, self.cfg.max_text_len)
        pooled, logits = self.text_encoder(tokens, mask)
        return pooled[0], logits[0]

    # -- batched forward --

    def forward(self, batch: dict, train: bool = False) -> ForwardOutput:
        cat_idx = batch["cat_idx"]  # (B, N)
        box6 = batch["box"]  # (B, N, 6)
        noise = batch["noise"]  # (B, N, C)
        tokens = batch["tokens"]  # (B, L)
        token_mask = batch["token_mask"]  # (B, L)
        b, n = cat_idx.shape
        device = box6.device

        f2d, f3d = self.toy(cat_idx, box6, noise)
        objects = self.fusion(f2d, f3d)
        f_box = self.box_embed(box6)
        text, text_logits = self.text_encoder(tokens, token_mask)

        losses: dict[str, torch.Tensor] = {}
        if train:
            losses["l_t"] = nn.functional.cross_entropy(text_logits, batch["target_cat"])
            obj_logits = self.object_classifier(objects)
            losses["l_v"] = nn.functional.cross_entropy(
                obj_logits.reshape(b * n, -1), cat_idx.reshape(b * n)
            )

        if self.ablation == "no_graph":
            o_prime = self.binary.cross(objects + f_box, text[:, None, :])
            conf = self.direct_head(o_prime).squeeze(-1)
            node_mask = torch.ones(b, n, dtype=torch.bool, device=device)
            if train:
                losses["l_ref"] = nn.functional.cross_entropy(conf, batch["target"])
            return ForwardOutput(
                confidences=conf,
                node_mask=node_mask,
                predictions=predict_object(conf, node_mask),
                text_logits=text_logits,
                losses=losses,
            )

        if self.ablation == "fully_connected":
            o_prime = self.binary.cross(objects + f_box, text[:, None, :])
            graphs = [complete_graph(n) for _ in range(b)]
            node_mask, adj = self._stack_masks(graphs, n, device)
            conf = self.grounding(o_prime, node_mask, adj, text)
            if train:
                losses["l_ref"] = grounding_loss(
                    conf, node_mask, batch["target"], self.lref_over_all_objects
                )
            return ForwardOutput(
                confidences=conf,
                node_mask=node_mask,
                predictions=predict_object(conf, node_mask),
                text_logits=text_logits,
                losses=losses,
                graphs=graphs,
            )

        # full / binary_only share the binary relational stage
        f_geo = self.geometry(box6)
        o_prime, relation, s1 = self.binary(objects, f_box, f_geo, text)
        s1_np = s1.detach().cpu().numpy()
        targets = batch["target"].cpu().numpy() if "target" in batch else None

        topk1: list[list[tuple[int, int]]] = []
        for i in range(b):
            pairs = select_top_pairs(s1_np[i], self.cfg.k1)
            if train:
                pairs = force_target_pair(pairs, s1_np[i], int(targets[i]))
            topk1.append(pairs)
        flat = torch.as_tensor(
            [[p[0] * n + p[1] for p in pairs] for pairs in topk1], device=device
        )
        rows = torch.arange(b, device=device)[:, None]
        selected = relation.reshape(b, n * n, -1)[rows, flat]

        if train:
            losses["l_br"] = binary_loss(s1, batch["pair_labels"])

        if self.ablation == "binary_only":
            graphs = [
                build_scene_graph([frozenset(p) for p in topk1[i]]) for i in range(b)
            ]
            node_mask, adj = self._stack_masks(graphs, n, device)
            conf = self.grounding(o_prime, node_mask, adj, text, rel_feats=selected)
            if train:
                losses["l_ref"] = grounding_loss(
                    conf, node_mask, batch["target"], self.lref_over_all_objects
                )
            return ForwardOutput(
                confidences=conf,
                node_mask=node_mask,
                predictions=predict_object(conf, node_mask),
                text_logits=text_logits,
                losses=losses,
                s1=s1,
                topk1=topk1,
                graphs=graphs,
            )

        _b_prime, _m, s2 = self.nary(selected, text)
        s2_np = s2.detach().cpu().numpy()

        dedup_all: list[list[DedupCombo]] = [
            dedup_combos(s2_np[i], topk1[i]) for i in range(b)
        ]
        if train:
            losses["l_nr"] = nary_loss_batched(
                s2, dedup_all, [int(t) for t in targets]
            )
        topk2: list[list[DedupCombo]] = []
        graphs = []
        for i in range(b):
            chosen = select_top_combos(dedup_all[i], self.cfg.k2)
            if train:
                chosen = force_target_combo(chosen, dedup_all[i], int(targets[i]))
            topk2.append(chosen)
            graphs.append(build_scene_graph([c.objects for c in chosen]))

        node_mask, adj = self._stack_masks(graphs, n, device)
        conf = self.grounding(o_prime, node_mask, adj, text, rel_feats=selected)
        if train:
            losses["l_ref"] = grounding_loss(
                conf, node_mask, batch["target"], self.lref_over_all_objects
            )
        return ForwardOutput(
            confidences=conf,
            node_mask=node_mask,
            predictions=predict_object(conf, node_mask),
            text_logits=text_logits,
            losses=losses,
            s1=s1,
            s2=s2,
            topk1=topk1,
            dedup=dedup_all,
            topk2=topk2,
            graphs=graphs,
        )

    @staticmethod
    def _stack_masks(graphs, n, device):
        pairs = [graph_masks(g, n) for g in graphs]
        masks = np.stack([p[0] for p in pairs])
        adjs = np.stack([p[1] for p in pairs])
        return (
            torch.from_numpy(masks).to(device),
            torch.from_numpy(adjs).to(device),
        )
