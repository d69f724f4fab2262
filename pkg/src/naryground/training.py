"""Training: total objective, learning-rate schedule, the deterministic
training loop, and the versioned checkpoint container."""

from __future__ import annotations

import json
import os
import pickle
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .data import build_token_vocab, slice_batch, tensorize_records
from .model import GroundingModel

CKPT_MAGIC = b"NGRDCKPT"
CKPT_FORMAT_VERSION = 1

ENV_NUM_WORKERS = "B2N_NUM_WORKERS"


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


def total_loss(l_ref, l_t, l_v, l_br, l_nr, cfg: TrainConfig):
    """Weighted sum of the grounding, auxiliary, and relational losses."""
    return l_ref + cfg.lambda1 * l_t + cfg.lambda2 * l_v + cfg.lambda3 * (l_br + l_nr)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: lr0 scaled by decay^d, one decay event every
    `decay_every` epochs from `decay_start` through `decay_end`."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    events = range(cfg.decay_start, cfg.decay_end + 1, cfg.decay_every)
    d = sum(1 for e in events if e <= epoch)
    return cfg.lr0 * cfg.decay**d


def _apply_workers_env() -> None:
    workers = os.environ.get(ENV_NUM_WORKERS)
    if workers:
        torch.set_num_threads(max(1, int(workers)))


@dataclass
class TrainResult:
    checkpoint_path: str
    curves: dict
    final_val_acc: float
    epochs_run: int


def _loss_components(losses: dict) -> dict:
    out = {"l_ref": 0.0, "l_t": 0.0, "l_v": 0.0, "l_br": 0.0, "l_nr": 0.0}
    out.update({k: float(v.detach()) for k, v in losses.items()})
    return out


def batch_accuracy(model: GroundingModel, tensors: dict, batch_size: int = 100) -> float:
    """Fraction of records whose predicted object id equals the target."""
    model.eval()
    count = tensors["target"].shape[0]
    correct = 0
    with torch.no_grad():
        for start in range(0, count, batch_size):
            batch = slice_batch(tensors, np.arange(start, min(start + batch_size, count)))
            out = model(batch, train=False)
            correct += int((out.predictions == batch["target"]).sum())
    return correct / count


def train(
    train_records,
    val_records,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_path,
    category_vocab=None,
    progress=None,
) -> TrainResult:
    """Deterministic training given (seed, config, data); writes a checkpoint
    to `out_path` and the loss/accuracy curves next to it."""
    _apply_workers_env()
    torch.manual_seed(train_cfg.seed)
    shuffle_rng = np.random.default_rng(train_cfg.seed)

    if category_vocab is None:
        present = set()
        for record in list(train_records) + list(val_records):
            present.update(record.scene.categories())
        category_vocab = tuple(sorted(present))
    token_vocab = build_token_vocab(train_records)

    model = GroundingModel(
        model_cfg, category_vocab, token_vocab, ablation=train_cfg.ablation
    )
    model.lref_over_all_objects = train_cfg.lref_over_all_objects
    train_tensors = tensorize_records(train_records, category_vocab, token_vocab, model_cfg)
    val_tensors = tensorize_records(val_records, category_vocab, token_vocab, model_cfg)

    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr0)
    count = len(train_records)
    curves = {"train_loss": [], "val_acc": [], "lr": [], "components": []}
    epochs_run = 0

    for epoch in range(train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = shuffle_rng.permutation(count)
        epoch_losses = []
        epoch_components = []
        for start in range(0, count, train_cfg.batch_size):
            batch = slice_batch(train_tensors, order[start : start + train_cfg.batch_size])
            out = model(batch, train=True)
            losses = out.losses
            loss = total_loss(
                losses["l_ref"],
                losses["l_t"],
                losses["l_v"],
                losses.get("l_br", torch.zeros(())),
                losses.get("l_nr", torch.zeros(())),
                train_cfg,
            )
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {start // train_cfg.batch_size}: "
                    f"{_loss_components(losses)}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
            epoch_components.append(_loss_components(losses))

        val_acc = batch_accuracy(model, val_tensors)
        curves["train_loss"].append(float(np.mean(epoch_losses)))
        curves["val_acc"].append(val_acc)
        curves["lr"].append(lr)
        curves["components"].append(
            {k: float(np.mean([c[k] for c in epoch_components])) for k in epoch_components[0]}
        )
        epochs_run = epoch + 1
        if progress is not None:
            progress(epoch, curves["train_loss"][-1], val_acc)
        if train_cfg.early_stop_acc is not None and val_acc >= train_cfg.early_stop_acc:
            break

    save_checkpoint(out_path, model, model_cfg, train_cfg)
    with open(str(out_path) + ".curves.json", "w", encoding="utf-8") as fh:
        json.dump(curves, fh, sort_keys=True)
        fh.write("\n")
    return TrainResult(
        checkpoint_path=str(out_path),
        curves=curves,
        final_val_acc=curves["val_acc"][-1],
        epochs_run=epochs_run,
    )


# --- checkpoint container -----------------------------------------------------


def save_checkpoint(path, model: GroundingModel, model_cfg: ModelConfig, train_cfg: TrainConfig) -> None:
    payload = {
        "format_version": CKPT_FORMAT_VERSION,
        "model_config": asdict(model_cfg),
        "train_config": asdict(train_cfg),
        "ablation": model.ablation,
        "category_vocab": list(model.category_vocab),
        "token_vocab": list(model.token_vocab),
        "params": {
            name: tensor.detach().cpu().numpy()
            for name, tensor in model.state_dict().items()
        },
        "torch_rng": torch.get_rng_state().numpy(),
    }
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        pickle.dump(payload, fh, protocol=4)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        payload = pickle.load(fh)
    version = payload.get("format_version")
    if version != CKPT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    return payload


def model_from_checkpoint(payload: dict) -> tuple[GroundingModel, TrainConfig]:
    model_cfg = ModelConfig(**payload["model_config"])
    train_cfg = TrainConfig(**payload["train_config"])
    model = GroundingModel(
        model_cfg,
        tuple(payload["category_vocab"]),
        tuple(payload["token_vocab"]),
        ablation=payload["ablation"],
    )
    model.lref_over_all_objects = train_cfg.lref_over_all_objects
    state = {name: torch.from_numpy(arr.copy()) for name, arr in payload["params"].items()}
    model.load_state_dict(state)
    model.eval()
    return model, train_cfg
