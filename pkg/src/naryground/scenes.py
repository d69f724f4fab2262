"""Core scene/utterance domain types, validation, and dataset (de)serialization.

Everything here is an immutable value object; instances are safe to share
across threads after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

DEFAULT_MAX_OBJECTS = 24

Vec3 = tuple[float, float, float]
CategoryPair = tuple[str, str]


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box given by center and strictly positive size."""

    center: Vec3
    size: Vec3

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))

    @property
    def zmin(self) -> float:
        return self.center[2] - self.size[2] / 2.0

    @property
    def zmax(self) -> float:
        return self.center[2] + self.size[2] / 2.0

    def interval(self, axis: int) -> tuple[float, float]:
        half = self.size[axis] / 2.0
        return self.center[axis] - half, self.center[axis] + half

    def volume(self) -> float:
        sx, sy, sz = self.size
        return sx * sy * sz

    def corners(self) -> list[Vec3]:
        (x0, x1), (y0, y1), (z0, z1) = (self.interval(a) for a in range(3))
        return [(x, y, z) for x in (x0, x1) for y in (y0, y1) for z in (z0, z1)]


def boxes_overlap(a: Box3, b: Box3) -> bool:
    """True iff the boxes share strictly positive intersection volume."""
    for axis in range(3):
        a0, a1 = a.interval(axis)
        b0, b1 = b.interval(axis)
        if min(a1, b1) - max(a0, b0) <= 0.0:
            return False
    return True


@dataclass(frozen=True)
class ObjectProposal:
    id: int
    category: str
    box: Box3


@dataclass(frozen=True)
class Scene:
    objects: tuple[ObjectProposal, ...]
    target_id: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def target(self) -> ObjectProposal:
        return self.objects[self.target_id]

    def categories(self) -> list[str]:
        return [o.category for o in self.objects]

    def of_category(self, category: str) -> list[ObjectProposal]:
        return [o for o in self.objects if o.category == category]

    def distractor_count(self) -> int:
        """Number of non-target objects sharing the target's category."""
        return len(self.of_category(self.target.category)) - 1


def canonical_pair(a: str, b: str) -> CategoryPair:
    """Unordered category pair in a canonical (sorted) representation."""
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class SoftRelationalLabel:
    """Unordered category pairs naming the entities of referential relations."""

    pairs: frozenset[CategoryPair]

    def __post_init__(self):
        object.__setattr__(
            self, "pairs", frozenset(canonical_pair(a, b) for a, b in self.pairs)
        )

    def sorted_pairs(self) -> list[CategoryPair]:
        return sorted(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class Utterance:
    text: str
    label: SoftRelationalLabel
    target_category: str
    rn: int


@dataclass(frozen=True)
class Record:
    """One dataset entry: a scene plus its referential utterance."""

    scene: Scene
    utterance: Utterance


def validate_scene(
    scene: Scene,
    vocab: Sequence[str],
    max_objects: int = DEFAULT_MAX_OBJECTS,
) -> list[str]:
    """Check scene invariants; returns a list of violations (empty = valid)."""
    violations: list[str] = []
    n = scene.n_objects
    if n < 2:
        violations.append(f"scene has {n} objects, need at least 2")
    if n > max_objects:
        violations.append(f"scene has {n} objects, exceeds max {max_objects}")
    known = set(vocab)
    for pos, obj in enumerate(scene.objects):
        if obj.id != pos:
            violations.append(f"object at position {pos} has id {obj.id}; ids must be 0..N-1")
        if obj.category not in known:
            violations.append(f"object {obj.id}: unknown category {obj.category!r}")
        if any(s <= 0 for s in obj.box.size):
            violations.append(f"object {obj.id}: non-positive size {obj.box.size}")
        if not all(_finite(v) for v in obj.box.center + obj.box.size):
            violations.append(f"object {obj.id}: non-finite box")
    if not (0 <= scene.target_id < n):
        violations.append(f"target out of range: target_id={scene.target_id}, N={n}")
    return violations


def validate_record(record: Record, vocab: Sequence[str]) -> list[str]:
    """Scene checks plus utterance/label consistency."""
    violations = validate_scene(record.scene, vocab)
    utt = record.utterance
    if not utt.label.pairs:
        violations.append("empty soft relational label")
    if utt.rn != len(utt.label.pairs):
        violations.append(f"rn={utt.rn} but label has {len(utt.label.pairs)} pairs")
    if 0 <= record.scene.target_id < record.scene.n_objects:
        if utt.target_category != record.scene.target.category:
            violations.append(
                f"target_category {utt.target_category!r} != scene target category "
                f"{record.scene.target.category!r}"
            )
    present = set(record.scene.categories())
    for a, b in utt.label.sorted_pairs():
        for name in (a, b):
            if name not in present:
                violations.append(f"label pair names absent category {name!r}")
    return violations


def _finite(v: float) -> bool:
    return v == v and abs(v) != float("inf")


# --- line-delimited JSON dataset files -------------------------------------
#
# Field names are part of the on-disk contract: objects, id, category, center,
# size, target_id, text, pairs, target_category, rn, seed.


def record_to_obj(record: Record) -> dict:
    scene, utt = record.scene, record.utterance
    return {
        "objects": [
            {
                "id": o.id,
                "category": o.category,
                "center": list(o.box.center),
                "size": list(o.box.size),
            }
            for o in scene.objects
        ],
        "target_id": scene.target_id,
        "seed": scene.seed,
        "text": utt.text,
        "pairs": [list(p) for p in utt.label.sorted_pairs()],
        "target_category": utt.target_category,
        "rn": utt.rn,
    }


def record_from_obj(obj: dict) -> Record:
    objects = tuple(
        ObjectProposal(
            id=int(o["id"]),
            category=o["category"],
            box=Box3(center=tuple(o["center"]), size=tuple(o["size"])),
        )
        for o in obj["objects"]
    )
    scene = Scene(objects=objects, target_id=int(obj["target_id"]), seed=int(obj["seed"]))
    label = SoftRelationalLabel(frozenset((a, b) for a, b in obj["pairs"]))
    utterance = Utterance(
        text=obj["text"],
        label=label,
        target_category=obj["target_category"],
        rn=int(obj["rn"]),
    )
    return Record(scene=scene, utterance=utterance)


def dumps_record(record: Record) -> str:
    return json.dumps(record_to_obj(record), separators=(",", ":"))


def write_dataset(path, records: Iterable[Record]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_obj(record), separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def iter_dataset(path) -> Iterator[Record]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield record_from_obj(json.loads(line))


def read_dataset(path) -> list[Record]:
    return list(iter_dataset(path))
