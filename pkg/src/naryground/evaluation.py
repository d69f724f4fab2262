"""Evaluation: per-scene predictions, hard/easy and relation-count splits,
and the serializable report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .data import slice_batch, tensorize_records
from .training import load_checkpoint, model_from_checkpoint


@dataclass(frozen=True)
class SceneResult:
    index: int
    predicted_id: int
    target_id: int
    rn: int
    distractors: int

    @property
    def correct(self) -> bool:
        return self.predicted_id == self.target_id


@dataclass(frozen=True)
class EvalReport:
    overall_acc: float
    hard_acc: float | None
    easy_acc: float | None
    rn_ge2_acc: float | None
    rn_le1_acc: float | None
    counts: dict
    records: tuple[SceneResult, ...]

    def to_json(self) -> str:
        payload = {
            "overall_acc": self.overall_acc,
            "hard_acc": self.hard_acc,
            "easy_acc": self.easy_acc,
            "rn_ge2_acc": self.rn_ge2_acc,
            "rn_le1_acc": self.rn_le1_acc,
            "counts": self.counts,
            "records": [asdict(r) for r in self.records],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        return cls(
            overall_acc=payload["overall_acc"],
            hard_acc=payload["hard_acc"],
            easy_acc=payload["easy_acc"],
            rn_ge2_acc=payload["rn_ge2_acc"],
            rn_le1_acc=payload["rn_le1_acc"],
            counts=payload["counts"],
            records=tuple(SceneResult(**r) for r in payload["records"]),
        )


def _split_acc(results, member) -> tuple[float | None, int]:
    subset = [r for r in results if member(r)]
    if not subset:
        return None, 0
    return sum(r.correct for r in subset) / len(subset), len(subset)


def summarize_results(results, hard_threshold: int = 2) -> EvalReport:
    """Build the report from per-scene results; hard scenes have at least
    `hard_threshold` same-category distractors, easy the rest."""
    if not results:
        raise ValueError("no results to summarize")
    overall, n_total = _split_acc(results, lambda r: True)
    hard, n_hard = _split_acc(results, lambda r: r.distractors >= hard_threshold)
    easy, n_easy = _split_acc(results, lambda r: r.distractors < hard_threshold)
    ge2, n_ge2 = _split_acc(results, lambda r: r.rn >= 2)
    le1, n_le1 = _split_acc(results, lambda r: r.rn <= 1)
    return EvalReport(
        overall_acc=overall,
        hard_acc=hard,
        easy_acc=easy,
        rn_ge2_acc=ge2,
        rn_le1_acc=le1,
        counts={
            "total": n_total,
            "hard": n_hard,
            "easy": n_easy,
            "rn_ge2": n_ge2,
            "rn_le1": n_le1,
        },
        records=tuple(results),
    )


def run_model(model, tensors: dict, batch_size: int = 100) -> list[SceneResult]:
    model.eval()
    count = tensors["target"].shape[0]
    results = []
    with torch.no_grad():
        for start in range(0, count, batch_size):
            idx = np.arange(start, min(start + batch_size, count))
            batch = slice_batch(tensors, idx)
            out = model(batch, train=False)
            for row, k in enumerate(idx):
                results.append(
                    SceneResult(
                        index=int(k),
                        predicted_id=int(out.predictions[row]),
                        target_id=int(batch["target"][row]),
                        rn=int(batch["rn"][row]),
                        distractors=int(batch["distractors"][row]),
                    )
                )
    return results


def evaluate(checkpoint_path, records, batch_size: int = 100) -> EvalReport:
    """Ground every record with the checkpointed model and build the report."""
    payload = load_checkpoint(checkpoint_path)
    model, train_cfg = model_from_checkpoint(payload)
    from .config import ModelConfig

    model_cfg = ModelConfig(**payload["model_config"])
    tensors = tensorize_records(
        records, model.category_vocab, model.token_vocab, model_cfg
    )
    results = run_model(model, tensors, batch_size=batch_size)
    return summarize_results(results, hard_threshold=train_cfg.hard_threshold)
