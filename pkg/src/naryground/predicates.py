"""Geometric relation predicates over axis-aligned boxes.

A fixed scene frame is assumed: +x is "right", +z is "up".  Comparative
predicates (closest_to, farthest_from, nearest_corner_of) are judged against
the subject's same-category competitors, so their evaluators take the
competitor boxes explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .scenes import Box3

# Tolerance for touching boxes: a stacked object rests exactly on its host.
_TOUCH_EPS = 1e-9


@dataclass(frozen=True)
class RelationPredicate:
    name: str
    arity: int
    comparative: bool
    phrase: str  # surface form used by templates and the parser


PREDICATES: dict[str, RelationPredicate] = {
    p.name: p
    for p in (
        RelationPredicate("closest_to", 2, True, "closest to"),
        RelationPredicate("farthest_from", 2, True, "farthest from"),
        RelationPredicate("left_of", 2, False, "to the left of"),
        RelationPredicate("right_of", 2, False, "to the right of"),
        RelationPredicate("between", 3, False, "between"),
        RelationPredicate("on_top_of", 2, False, "on top of"),
        RelationPredicate("below", 2, False, "below"),
        RelationPredicate("nearest_corner_of", 2, True, "in the nearest corner of"),
    )
}

BINARY_PREDICATES = tuple(
    p for p in PREDICATES.values() if p.arity == 2
)


class PredicateArityError(ValueError):
    pass


def _dist(a: Box3, b: Box3) -> float:
    return math.dist(a.center, b.center)


def _corner_dist(subject: Box3, anchor: Box3) -> float:
    return min(math.dist(subject.center, c) for c in anchor.corners())


def _xy_overlap(a: Box3, b: Box3) -> bool:
    for axis in (0, 1):
        a0, a1 = a.interval(axis)
        b0, b1 = b.interval(axis)
        if min(a1, b1) - max(a0, b0) <= 0.0:
            return False
    return True


def evaluate_predicate(
    pred: RelationPredicate,
    subject: Box3,
    anchors: Sequence[Box3],
    competitors: Sequence[Box3] = (),
) -> bool:
    """Deterministic truth value of `pred(subject, *anchors)`.

    `competitors` are the other boxes of the subject's category; they decide
    comparative predicates and are ignored by the rest.
    """
    if len(anchors) != pred.arity - 1:
        raise PredicateArityError(
            f"{pred.name} takes {pred.arity - 1} anchors, got {len(anchors)}"
        )
    if pred.name == "closest_to":
        d = _dist(subject, anchors[0])
        return all(d < _dist(c, anchors[0]) for c in competitors)
    if pred.name == "farthest_from":
        d = _dist(subject, anchors[0])
        return all(d > _dist(c, anchors[0]) for c in competitors)
    if pred.name == "nearest_corner_of":
        d = _corner_dist(subject, anchors[0])
        return all(d < _corner_dist(c, anchors[0]) for c in competitors)
    if pred.name == "left_of":
        return subject.center[0] < anchors[0].center[0]
    if pred.name == "right_of":
        return subject.center[0] > anchors[0].center[0]
    if pred.name == "on_top_of":
        return subject.zmin >= anchors[0].zmax - _TOUCH_EPS and _xy_overlap(subject, anchors[0])
    if pred.name == "below":
        return subject.zmax <= anchors[0].zmin + _TOUCH_EPS and _xy_overlap(subject, anchors[0])
    if pred.name == "between":
        a, b = anchors[0].center, anchors[1].center
        d = tuple(bi - ai for ai, bi in zip(a, b))
        dd = sum(di * di for di in d)
        if dd == 0.0:
            return False
        t = sum((si - ai) * di for si, ai, di in zip(subject.center, a, d)) / dd
        return 0.0 <= t <= 1.0
    raise ValueError(f"unknown predicate {pred.name!r}")


# --- relational constraints over scene variables ----------------------------
#
# An utterance denotes a conjunction of constraints over variables: variable 0
# is the target candidate; variables 1..k are anchors, each bound to a
# category.  Anchor bindings are existential.


@dataclass(frozen=True)
class Constraint:
    pred: RelationPredicate
    subject: int  # variable index
    anchors: tuple[int, ...]  # variable indices


@dataclass(frozen=True)
class RelationalPattern:
    """Conjunction of constraints; var_categories[i] is variable i's category."""

    var_categories: tuple[str, ...]
    constraints: tuple[Constraint, ...]

    def category_pairs(self) -> list[tuple[str, str]]:
        pairs = []
        for c in self.constraints:
            for a in c.anchors:
                pairs.append((self.var_categories[c.subject], self.var_categories[a]))
        return pairs


def find_satisfiers(scene, pattern: RelationalPattern) -> list[int]:
    """Object ids of target-category objects satisfying the full conjunction.

    Exhaustive: enumerates every assignment of anchor variables to objects of
    their bound categories.  Comparative constraints are judged against the
    subject object's same-category peers.
    """
    by_cat: dict[str, list] = {}
    for obj in scene.objects:
        by_cat.setdefault(obj.category, []).append(obj)

    target_cat = pattern.var_categories[0]
    n_vars = len(pattern.var_categories)
    satisfiers = []
    for candidate in by_cat.get(target_cat, []):
        if _satisfiable(scene, pattern, by_cat, [candidate] + [None] * (n_vars - 1), 1):
            satisfiers.append(candidate.id)
    return satisfiers


def _satisfiable(scene, pattern, by_cat, assignment, var) -> bool:
    if var == len(assignment):
        return all(_holds(scene, pattern, by_cat, c, assignment) for c in pattern.constraints)
    for obj in by_cat.get(pattern.var_categories[var], []):
        if any(prev is not None and prev.id == obj.id for prev in assignment):
            continue
        assignment[var] = obj
        if _satisfiable(scene, pattern, by_cat, assignment, var + 1):
            assignment[var] = None
            return True
        assignment[var] = None
    return False


def _holds(scene, pattern, by_cat, constraint: Constraint, assignment) -> bool:
    subject = assignment[constraint.subject]
    anchors = [assignment[a].box for a in constraint.anchors]
    competitors = [o.box for o in by_cat[subject.category] if o.id != subject.id]
    return evaluate_predicate(constraint.pred, subject.box, anchors, competitors)
