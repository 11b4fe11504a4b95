"""Turn identification results plus prototype similarities into a transfer plan.

Indistinguishable relations move to the model's predicted predicate at a
rate set by the prototype similarity of the two classes; NA pairs are
promoted by influence factor (scarce triplets with improbable NA scores
first).  Applying a plan produces a new, re-validated dataset.
"""

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import Provenance
from .errors import DatasetFormatError, PlanError, ValidationError

UNSEEN_COUNT_FLOOR = 0.5  # unseen pairs count as half an observation


class MoveKind(str, Enum):
    INDISTINGUISHABLE = "indistinguishable"
    NA_PROMOTION = "na_promotion"


@dataclass(frozen=True)
class Move:
    relation_id: int
    from_predicate: int | None
    to_predicate: int
    score: float
    kind: MoveKind


@dataclass
class TransferPlan:
    moves: list = field(default_factory=list)

    def validate(self):
        seen = set()
        for mv in self.moves:
            if mv.relation_id in seen:
                raise PlanError(f"relation {mv.relation_id} moved twice in one plan")
            seen.add(mv.relation_id)
            if mv.kind is MoveKind.INDISTINGUISHABLE and mv.from_predicate == mv.to_predicate:
                raise PlanError(f"relation {mv.relation_id}: no-op move")
            if not math.isfinite(mv.score):
                raise PlanError(f"relation {mv.relation_id}: non-finite score")
        return self

    def __len__(self):
        return len(self.moves)


@dataclass
class ScarcityTable:
    """Inverse annotation counts per (subject, object) class pair and per predicate."""

    pair_counts: dict
    predicate_counts: np.ndarray

    def pair_scarcity(self, subject_class, object_class):
        count = self.pair_counts.get((subject_class, object_class), 0)
        return 1.0 / max(float(count), UNSEEN_COUNT_FLOOR)

    def predicate_scarcity(self, predicate):
        return 1.0 / max(float(self.predicate_counts[predicate]), UNSEEN_COUNT_FLOOR)


def compute_scarcity(dataset):
    """Count annotated relations; scarcity is the inverse count floored at 0.5."""
    if not dataset.relations and not dataset.na_pairs:
        raise ValidationError("cannot compute scarcity of an empty dataset")
    pair_counts = {}
    predicate_counts = np.zeros(len(dataset.vocab))
    for rel in dataset.relations:
        key = (rel.subject.class_label, rel.object.class_label)
        pair_counts[key] = pair_counts.get(key, 0) + 1
        predicate_counts[rel.predicate] += 1
    return ScarcityTable(pair_counts=pair_counts, predicate_counts=predicate_counts)


def softmax(values):
    values = np.asarray(values, dtype=np.float64)
    shifted = values - values.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def influence_factor(na_score, c_pair, c_pred):
    """E = sqrt(-log(na_score) * c_pair * c_pred); higher means promote sooner."""
    if not 0 < na_score <= 1:
        raise ValidationError("na_score must lie in (0, 1]")
    if c_pair <= 0 or c_pred <= 0:
        raise ValidationError("scarcities must be positive")
    return math.sqrt(-math.log(na_score) * c_pair * c_pred)


def plan_indistinguishable(flagged_ids, predictions, similarity, dataset,
                           direction_constraint=True):
    """Confidence-ranked adaptive transfer of flagged relations.

    Flagged relations are grouped by (annotated, predicted) predicate; within
    each group the similarity entry acts as a transfer ratio and the most
    confident ceil(ratio * group size) relations move.  With the direction
    constraint, only groups going from a more-frequent to a less-frequent
    predicate are eligible.
    """
    similarity = np.asarray(similarity, dtype=np.float64)
    by_id = {rel.relation_id: rel for rel in dataset.relations}
    counts = np.zeros(len(dataset.vocab), dtype=int)
    for rel in dataset.relations:
        counts[rel.predicate] += 1

    groups = {}
    for rid in sorted(flagged_ids):
        rel = by_id.get(rid)
        if rel is None:
            raise PlanError(f"flagged id {rid} is not an annotated relation")
        rec = predictions[rid]
        target = rec.argmax()
        if target == rel.predicate:
            continue
        groups.setdefault((rel.predicate, target), []).append(
            (rid, float(rec.scores[target]))
        )

    moves = []
    for (src, dst) in sorted(groups):
        if direction_constraint and not counts[src] > counts[dst]:
            continue
        members = groups[(src, dst)]
        ratio = float(np.clip(similarity[src, dst], 0.0, 1.0))
        n_move = math.ceil(ratio * len(members))
        members.sort(key=lambda t: (-t[1], t[0]))
        for rid, score in members[:n_move]:
            moves.append(Move(rid, src, dst, score, MoveKind.INDISTINGUISHABLE))
    return moves


def plan_na_promotions(candidates, scarcity, dataset, kg):
    """Promote the top ceil(K_g * |candidates|) NA pairs by influence factor.

    ``candidates`` holds (relation_id, predicted predicate, na_score) as
    produced by identification.  Pair scarcities are softmax-normalized over
    the candidate set before entering the influence factor.
    """
    if not 0 <= kg <= 1:
        raise ValidationError("K_g must lie in [0, 1]")
    if not candidates:
        return []
    by_id = {rel.relation_id: rel for rel in dataset.na_pairs}
    raw_pair = []
    for rid, _, _ in candidates:
        rel = by_id.get(rid)
        if rel is None:
            raise PlanError(f"candidate {rid} is not an NA pair")
        raw_pair.append(scarcity.pair_scarcity(rel.subject.class_label, rel.object.class_label))
    pair_weights = softmax(raw_pair)

    scored = []
    for (rid, target, na_score), c_pair in zip(candidates, pair_weights):
        e = influence_factor(na_score, float(c_pair), scarcity.predicate_scarcity(target))
        scored.append((rid, target, e))
    scored.sort(key=lambda t: (-t[2], t[0]))
    n_promote = math.ceil(kg * len(scored))
    return [
        Move(rid, None, target, e, MoveKind.NA_PROMOTION)
        for rid, target, e in scored[:n_promote]
    ]


def apply_plan(dataset, plan):
    """Apply a validated plan to a fresh copy of the dataset.

    Indistinguishable moves relabel in place (provenance guard refuses
    already-transferred relations); promotions turn NA pairs into annotated
    relations.  The result re-validates all dataset invariants.
    """
    plan.validate()
    out = dataset.copy()
    relations = {rel.relation_id: rel for rel in out.relations}
    na_pairs = {rel.relation_id: rel for rel in out.na_pairs}

    promoted_ids = set()
    for mv in plan.moves:
        if mv.kind is MoveKind.INDISTINGUISHABLE:
            rel = relations.get(mv.relation_id)
            if rel is None:
                raise PlanError(f"move references unknown relation {mv.relation_id}")
            if rel.provenance is not Provenance.ORIGINAL:
                raise PlanError(
                    f"relation {mv.relation_id} already has provenance {rel.provenance.value}"
                )
            if rel.predicate != mv.from_predicate:
                raise PlanError(
                    f"relation {mv.relation_id}: annotated predicate {rel.predicate} "
                    f"does not match move source {mv.from_predicate}"
                )
            rel.predicate = mv.to_predicate
            rel.provenance = Provenance.TRANSFERRED
        else:
            rel = na_pairs.get(mv.relation_id)
            if rel is None:
                raise PlanError(f"promotion references unknown NA pair {mv.relation_id}")
            rel.predicate = mv.to_predicate
            rel.provenance = Provenance.NA_PROMOTED
            promoted_ids.add(mv.relation_id)

    if promoted_ids:
        out.relations.extend(rel for rel in out.na_pairs if rel.relation_id in promoted_ids)
        out.na_pairs = [rel for rel in out.na_pairs if rel.relation_id not in promoted_ids]
    return out.validate()


def save_plan(plan, vocab, path):
    with open(path, "w") as fh:
        for mv in plan.moves:
            obj = {
                "relation_id": mv.relation_id,
                "kind": mv.kind.value,
                "from_predicate": None if mv.from_predicate is None else vocab.label(mv.from_predicate),
                "to_predicate": vocab.label(mv.to_predicate),
                "score": float(mv.score),
            }
            fh.write(json.dumps(obj) + "\n")


def load_plan(path, vocab):
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("file not found", path=path)
    moves = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                kind = MoveKind(obj["kind"])
                src = obj["from_predicate"]
                moves.append(
                    Move(
                        relation_id=int(obj["relation_id"]),
                        from_predicate=None if src is None else vocab.index(src),
                        to_predicate=vocab.index(obj["to_predicate"]),
                        score=float(obj["score"]),
                        kind=kind,
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DatasetFormatError(f"bad move record: {exc}", path=path, line=line_no) from exc
    return TransferPlan(moves).validate()
