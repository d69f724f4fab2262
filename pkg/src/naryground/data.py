"""Dataset tensorization for training and evaluation.

All records of a dataset must share one object count so batches stack
densely.  Noise is a pure function of each scene's stored seed, so the same
file always tensorizes to the same tensors.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .config import ModelConfig
from .encoders import box_params, scene_noise
from .relations import pairs_to_binary_labels, tokenize
from .scenes import Record

PAD_ID = 0
UNK_ID = 1
_SPECIALS = 2


def build_token_vocab(records: Sequence[Record]) -> tuple[str, ...]:
    tokens = set()
    for record in records:
        tokens.update(tokenize(record.utterance.text))
    return tuple(sorted(tokens))


def encode_tokens(
    texts: Sequence[str], token_vocab: Sequence[str], max_len: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Token id matrix plus validity mask; unknown tokens map to UNK."""
    index = {tok: i + _SPECIALS for i, tok in enumerate(token_vocab)}
    encoded = []
    for text in texts:
        toks = tokenize(text)
        if not toks:
            raise ValueError(f"empty text: {text!r}")
        encoded.append([index.get(t, UNK_ID) for t in toks[:max_len]])
    width = max(len(e) for e in encoded)
    ids = torch.full((len(encoded), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(encoded), width), dtype=torch.bool)
    for row, e in enumerate(encoded):
        ids[row, : len(e)] = torch.as_tensor(e, dtype=torch.long)
        mask[row, : len(e)] = True
    return ids, mask


def tensorize_records(
    records: Sequence[Record],
    category_vocab: Sequence[str],
    token_vocab: Sequence[str],
    cfg: ModelConfig,
    dtype: torch.dtype = torch.float32,
) -> dict:
    """Stack a dataset into dense tensors keyed for GroundingModel.forward."""
    if not records:
        raise ValueError("no records to tensorize")
    n = records[0].scene.n_objects
    for record in records:
        if record.scene.n_objects != n:
            raise ValueError("records must share one object count for batching")
    cfg.check_scene_size(n)
    cat_index = {c: i for i, c in enumerate(category_vocab)}

    count = len(records)
    cat_idx = np.zeros((count, n), dtype=np.int64)
    box = np.zeros((count, n, 6), dtype=np.float64)
    noise = np.zeros((count, n, cfg.dim), dtype=np.float64)
    pair_labels = np.zeros((count, n, n), dtype=np.float64)
    target = np.zeros(count, dtype=np.int64)
    target_cat = np.zeros(count, dtype=np.int64)
    rn = np.zeros(count, dtype=np.int64)
    distractors = np.zeros(count, dtype=np.int64)

    for k, record in enumerate(records):
        scene = record.scene
        for obj in scene.objects:
            cat_idx[k, obj.id] = cat_index[obj.category]
            box[k, obj.id] = box_params(obj.box)
        noise[k] = scene_noise(scene, cfg.dim, cfg.noise_sigma)
        pair_labels[k] = pairs_to_binary_labels(record.utterance.label.pairs, scene)
        target[k] = scene.target_id
        target_cat[k] = cat_index[record.utterance.target_category]
        rn[k] = record.utterance.rn
        distractors[k] = scene.distractor_count()

    tokens, token_mask = encode_tokens(
        [r.utterance.text for r in records], token_vocab, cfg.max_text_len
    )
    return {
        "cat_idx": torch.from_numpy(cat_idx),
        "box": torch.from_numpy(box).to(dtype),
        "noise": torch.from_numpy(noise).to(dtype),
        "pair_labels": torch.from_numpy(pair_labels).to(dtype),
        "tokens": tokens,
        "token_mask": token_mask,
        "target": torch.from_numpy(target),
        "target_cat": torch.from_numpy(target_cat),
        "rn": torch.from_numpy(rn),
        "distractors": torch.from_numpy(distractors),
    }


def slice_batch(tensors: dict, indices: np.ndarray | Sequence[int]) -> dict:
    idx = torch.as_tensor(np.asarray(indices), dtype=torch.long)
    return {key: value[idx] for key, value in tensors.items()}
