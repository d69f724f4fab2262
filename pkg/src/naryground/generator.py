"""Synthetic desk-scale scenes and multi-relation referential descriptions.

Every emitted utterance is verified by exhaustive search: exactly one object
of the target category satisfies the full predicate conjunction, and it is
the annotated target.  Records are generated from independent per-record rng
streams, so a dataset is reproducible byte-for-byte from its seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .predicates import (
    BINARY_PREDICATES,
    PREDICATES,
    Constraint,
    RelationalPattern,
    find_satisfiers,
)
from .scenes import (
    Box3,
    ObjectProposal,
    Record,
    Scene,
    SoftRelationalLabel,
    Utterance,
    boxes_overlap,
    canonical_pair,
)

CATEGORY_NAMES = (
    "chair",
    "table",
    "lamp",
    "plant",
    "shelf",
    "box",
    "couch",
    "pillow",
    "desk",
    "monitor",
    "cabinet",
    "rug",
)

_PLACEMENT_RETRIES = 1000
_SCENE_RETRIES = 50
_SYNTH_ATTEMPTS = 300
_STACK_PROB = 0.25


class GenerationError(RuntimeError):
    """Scene placement or record generation could not be completed."""


class SynthesisError(RuntimeError):
    """No disambiguating predicate conjunction found for the scene."""


@dataclass(frozen=True)
class GenConfig:
    n_objects: int = 12
    n_categories: int = 6
    relations_per_utterance: tuple[int, int] = (1, 3)
    min_distractors: int = 2
    scene_extent: tuple[float, float, float] = (10.0, 10.0, 3.0)
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.relations_per_utterance
        if not (1 <= lo <= hi <= 3):
            raise GenerationError(f"relations_per_utterance range {lo}..{hi} invalid")
        if self.n_categories < 2 or self.n_categories > len(CATEGORY_NAMES):
            raise GenerationError(f"n_categories={self.n_categories} unsupported")
        if self.n_objects < 2 * self.min_distractors:
            raise GenerationError(
                f"n_objects={self.n_objects} < 2*min_distractors={2 * self.min_distractors}"
            )
        if self.n_objects < self.min_distractors + 1:
            raise GenerationError("cannot place target with required distractors")

    @property
    def categories(self) -> tuple[str, ...]:
        return CATEGORY_NAMES[: self.n_categories]


# --- scene placement --------------------------------------------------------


def _sample_size(rng: np.random.Generator) -> tuple[float, float, float]:
    sx, sy = rng.uniform(0.4, 1.4, size=2)
    sz = rng.uniform(0.3, 1.0)
    return (float(sx), float(sy), float(sz))


def generate_scene(cfg: GenConfig, rng: np.random.Generator | None = None) -> Scene:
    """Place non-overlapping boxes; the target category gets distractors."""
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    cats = cfg.categories
    scene_seed = int(rng.integers(0, 2**31 - 1))

    target_cat = cats[rng.integers(len(cats))]
    others = [c for c in cats if c != target_cat]
    n_forced = cfg.min_distractors + 1
    assignments = [target_cat] * n_forced
    # guarantee a few distinct anchor categories, then fill uniformly
    anchor_seed = list(rng.permutation(others))[: min(3, len(others))]
    assignments += [str(c) for c in anchor_seed]
    while len(assignments) < cfg.n_objects:
        assignments.append(cats[rng.integers(len(cats))])
    assignments = assignments[: cfg.n_objects]
    order = rng.permutation(cfg.n_objects)
    assignments = [assignments[i] for i in order]

    ex, ey, ez = cfg.scene_extent
    placed: list[Box3] = []
    retries = 0
    for _ in range(cfg.n_objects):
        while True:
            if retries > _PLACEMENT_RETRIES:
                raise GenerationError(
                    f"placement failed after {_PLACEMENT_RETRIES} retries"
                )
            retries += 1
            size = _sample_size(rng)
            if placed and rng.random() < _STACK_PROB:
                host = placed[rng.integers(len(placed))]
                jitter = rng.uniform(-0.2, 0.2, size=2)
                cx = host.center[0] + float(jitter[0])
                cy = host.center[1] + float(jitter[1])
                cz = host.zmax + size[2] / 2.0
            else:
                cx = float(rng.uniform(-ex / 2 + size[0] / 2, ex / 2 - size[0] / 2))
                cy = float(rng.uniform(-ey / 2 + size[1] / 2, ey / 2 - size[1] / 2))
                cz = size[2] / 2.0
            box = Box3(center=(cx, cy, cz), size=size)
            if box.zmax > ez:
                continue
            if abs(cx) + size[0] / 2 > ex / 2 or abs(cy) + size[1] / 2 > ey / 2:
                continue
            if any(boxes_overlap(box, other) for other in placed):
                continue
            placed.append(box)
            break

    objects = tuple(
        ObjectProposal(id=i, category=assignments[i], box=placed[i])
        for i in range(cfg.n_objects)
    )
    target_ids = [o.id for o in objects if o.category == target_cat]
    target_id = int(target_ids[rng.integers(len(target_ids))])
    return Scene(objects=objects, target_id=target_id, seed=scene_seed)


# --- utterance synthesis ----------------------------------------------------
#
# Each form lists constraint skeletons (kind, subject var, anchor vars) over
# variables 0 (target) and 1..k (anchors, all bound to distinct categories).
# Chained skeletons must have their subject equal to the previously mentioned
# anchor so the rendered text stays unambiguous.

_FORMS: dict[int, list[list[tuple[str, int, tuple[int, ...]]]]] = {
    1: [
        [("binary", 0, (1,))],
    ],
    2: [
        [("binary", 0, (1,)), ("binary", 0, (2,))],
        [("binary", 0, (1,)), ("binary", 1, (2,))],
        [("between", 0, (1, 2))],
    ],
    3: [
        [("binary", 0, (1,)), ("binary", 0, (2,)), ("binary", 0, (3,))],
        [("binary", 0, (1,)), ("binary", 1, (2,)), ("binary", 0, (3,))],
        [("between", 0, (1, 2)), ("binary", 0, (3,))],
        [("binary", 0, (1,)), ("binary", 1, (2,)), ("binary", 2, (3,))],
    ],
}


def render_pattern(pattern: RelationalPattern) -> str:
    """English surface form; "and also" always modifies the head entity,
    "that is" always modifies the most recently mentioned one."""
    cats = pattern.var_categories
    parts = [f"the {cats[0]}"]
    last_var = 0
    for i, c in enumerate(pattern.constraints):
        if i == 0:
            joiner = " "
        elif c.subject == 0:
            joiner = " and also "
        else:
            if c.subject != last_var:
                raise ValueError("chained constraint must attach to the last mention")
            joiner = " that is "
        if c.pred.name == "between":
            phrase = f"between the {cats[c.anchors[0]]} and the {cats[c.anchors[1]]}"
        else:
            phrase = f"{c.pred.phrase} the {cats[c.anchors[0]]}"
        parts.append(joiner + phrase)
        last_var = c.anchors[-1]
    return "".join(parts)


def _build_pattern(form, target_cat: str, anchor_cats: list[str], preds) -> RelationalPattern:
    var_cats = (target_cat, *anchor_cats)
    constraints = []
    for (kind, subject, anchors), pred in zip(form, preds):
        constraints.append(Constraint(pred=pred, subject=subject, anchors=anchors))
    return RelationalPattern(var_categories=var_cats, constraints=tuple(constraints))


def synthesize_utterance(
    scene: Scene, cfg: GenConfig, rng: np.random.Generator
) -> Utterance:
    """Search predicate conjunctions until exactly the target satisfies one."""
    present = sorted(set(scene.categories()))
    target_cat = scene.target.category
    anchors_avail = [c for c in present if c != target_cat]
    lo, hi = cfg.relations_per_utterance

    for _ in range(_SYNTH_ATTEMPTS):
        rn = int(rng.integers(lo, hi + 1))
        forms = _FORMS[rn]
        form = forms[rng.integers(len(forms))]
        n_anchors = max(a for _, _, anchors in form for a in anchors)
        if len(anchors_avail) < n_anchors:
            continue
        pick = rng.choice(len(anchors_avail), size=n_anchors, replace=False)
        anchor_cats = [anchors_avail[int(i)] for i in pick]
        preds = []
        for kind, _, _ in form:
            if kind == "between":
                preds.append(PREDICATES["between"])
            else:
                preds.append(BINARY_PREDICATES[rng.integers(len(BINARY_PREDICATES))])
        pattern = _build_pattern(form, target_cat, anchor_cats, preds)
        satisfiers = find_satisfiers(scene, pattern)
        if satisfiers != [scene.target_id]:
            continue
        pairs = frozenset(canonical_pair(a, b) for a, b in pattern.category_pairs())
        if len(pairs) != rn:
            continue  # degenerate duplicate pair; try another draw
        return Utterance(
            text=render_pattern(pattern),
            label=SoftRelationalLabel(pairs),
            target_category=target_cat,
            rn=rn,
        )
    raise SynthesisError(
        f"no disambiguating conjunction found after {_SYNTH_ATTEMPTS} attempts"
    )


def generate_record(cfg: GenConfig, rng: np.random.Generator) -> Record:
    """Scene + utterance; regenerates the scene if synthesis dead-ends."""
    last_err: Exception | None = None
    for _ in range(_SCENE_RETRIES):
        scene = generate_scene(cfg, rng)
        try:
            utterance = synthesize_utterance(scene, cfg, rng)
        except SynthesisError as err:
            last_err = err
            continue
        return Record(scene=scene, utterance=utterance)
    raise GenerationError(f"record generation failed: {last_err}")


def iter_records(cfg: GenConfig, count: int):
    """Independent rng stream per record: order-independent and reproducible."""
    cfg.validate()
    children = np.random.SeedSequence(cfg.seed).spawn(count)
    for child in children:
        yield generate_record(cfg, np.random.default_rng(child))


def summarize_records(records: Sequence[Record]) -> dict:
    rn_hist: dict[str, int] = {}
    distractor_hist: dict[str, int] = {}
    category_hist: dict[str, int] = {}
    for record in records:
        rn_hist[str(record.utterance.rn)] = rn_hist.get(str(record.utterance.rn), 0) + 1
        d = record.scene.distractor_count()
        distractor_hist[str(d)] = distractor_hist.get(str(d), 0) + 1
        for obj in record.scene.objects:
            category_hist[obj.category] = category_hist.get(obj.category, 0) + 1
    return {
        "count": len(records),
        "rn_histogram": dict(sorted(rn_hist.items())),
        "distractor_histogram": dict(sorted(distractor_hist.items())),
        "category_histogram": dict(sorted(category_hist.items())),
    }


def generate_dataset(cfg: GenConfig, count: int, path) -> dict:
    """Write `count` records as line-delimited JSON; returns summary stats."""
    from .scenes import write_dataset

    records = list(iter_records(cfg, count))
    write_dataset(path, records)
    summary = summarize_records(records)
    with open(str(path) + ".summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
