"""Relation dataset model: loading, validation, target identification, sentences.

A dataset is a JSONL file (one image per line) plus two sidecar JSON array
files holding the predicate and entity vocabularies.  Annotated relations
carry a predicate label; NA pairs are subject/object pairs without one.
"""

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    CoverageError,
    DatasetFormatError,
    ValidationError,
    VocabularyError,
)

SENTENCE_TEMPLATE = "The {subject} is {predicate} the {object}."

# NA pairs have no predicate but still need a sentence for embedding export;
# a fixed neutral connective keeps the template shape identical everywhere.
NA_PLACEHOLDER_PREDICATE = "related to"


class Provenance(str, Enum):
    ORIGINAL = "original"
    TRANSFERRED = "transferred"
    NA_PROMOTED = "na_promoted"


@dataclass(frozen=True)
class PredicateVocab:
    """Ordered predicate labels with a label -> index bijection."""

    labels: tuple

    def __post_init__(self):
        if len(self.labels) < 2:
            raise VocabularyError("predicate vocabulary needs at least 2 labels")
        if len(set(self.labels)) != len(self.labels):
            raise VocabularyError("predicate labels must be unique")
        if any(not lab for lab in self.labels):
            raise VocabularyError("predicate labels must be non-empty")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self._index[label]
        except KeyError:
            raise VocabularyError(f"unknown predicate label: {label!r}") from None

    def label(self, idx):
        if not 0 <= idx < len(self.labels):
            raise VocabularyError(f"predicate index {idx} out of range [0, {len(self.labels)})")
        return self.labels[idx]

    @classmethod
    def from_json_file(cls, path):
        labels = _load_json_array(path)
        return cls(tuple(labels))


@dataclass(frozen=True)
class EntityRef:
    class_label: str
    segment_id: str


@dataclass
class RelationInstance:
    """One <subject, predicate, object> triple; predicate None marks an NA pair."""

    relation_id: int
    image_id: str
    subject: EntityRef
    object: EntityRef
    predicate: int | None
    provenance: Provenance = Provenance.ORIGINAL

    @property
    def is_na(self):
        return self.predicate is None


@dataclass
class Dataset:
    vocab: PredicateVocab
    entity_vocab: tuple
    relations: list = field(default_factory=list)
    na_pairs: list = field(default_factory=list)

    def validate(self):
        q = len(self.vocab)
        entity_set = set(self.entity_vocab)
        seen_ids = set()
        seg_class = {}
        for rel in list(self.relations) + list(self.na_pairs):
            if rel.relation_id in seen_ids:
                raise DatasetFormatError(f"duplicate relation_id {rel.relation_id}")
            seen_ids.add(rel.relation_id)
            if rel.subject.segment_id == rel.object.segment_id:
                raise DatasetFormatError(
                    f"relation {rel.relation_id}: subject and object share segment "
                    f"{rel.subject.segment_id!r}"
                )
            for ref in (rel.subject, rel.object):
                if not ref.class_label:
                    raise DatasetFormatError(f"relation {rel.relation_id}: empty entity class")
                if entity_set and ref.class_label not in entity_set:
                    raise VocabularyError(f"unknown entity class: {ref.class_label!r}")
                key = (rel.image_id, ref.segment_id)
                prev = seg_class.setdefault(key, ref.class_label)
                if prev != ref.class_label:
                    raise DatasetFormatError(
                        f"segment {key} has conflicting classes {prev!r} and {ref.class_label!r}"
                    )
        for rel in self.relations:
            if rel.predicate is None:
                raise DatasetFormatError(f"relation {rel.relation_id}: annotated relation lacks predicate")
            if not 0 <= rel.predicate < q:
                raise VocabularyError(
                    f"relation {rel.relation_id}: predicate index {rel.predicate} out of range [0, {q})"
                )
        for rel in self.na_pairs:
            if rel.predicate is not None:
                raise DatasetFormatError(f"NA pair {rel.relation_id} carries a predicate")
        return self

    def image_ids(self):
        """Distinct image ids in first-appearance order."""
        seen = dict()
        for rel in list(self.relations) + list(self.na_pairs):
            seen.setdefault(rel.image_id, None)
        return list(seen)

    def relations_by_image(self):
        out = {img: [] for img in self.image_ids()}
        for rel in self.relations:
            out[rel.image_id].append(rel)
        return out

    def copy(self):
        return Dataset(
            vocab=self.vocab,
            entity_vocab=self.entity_vocab,
            relations=[replace(r) for r in self.relations],
            na_pairs=[replace(r) for r in self.na_pairs],
        )


@dataclass(frozen=True)
class PredictionRecord:
    """External model scores over the Q predicates plus an NA score."""

    relation_id: int
    scores: np.ndarray
    na_score: float

    def argmax(self):
        # np.argmax breaks ties toward the lowest index, which is the
        # documented deterministic tie rule.
        return int(np.argmax(self.scores))


def _load_json_array(path):
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("file not found", path=path)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"invalid JSON: {exc}", path=path) from exc
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise DatasetFormatError("expected a JSON array of strings", path=path)
    return data


def _entity_from_json(obj, path, line):
    if not isinstance(obj, dict) or "class" not in obj or "seg" not in obj:
        raise DatasetFormatError("entity needs 'class' and 'seg' fields", path=path, line=line)
    return EntityRef(class_label=str(obj["class"]), segment_id=str(obj["seg"]))


def load_dataset(path, predicate_vocab_path=None, entity_vocab_path=None):
    """Load and validate a dataset from JSONL plus vocabulary sidecars.

    Sidecar paths default to ``predicates.json`` / ``entities.json`` next to
    the dataset file.  Records without a relation_id get the smallest unused
    ids assigned in file order.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("file not found", path=path)
    if predicate_vocab_path is None:
        predicate_vocab_path = path.parent / "predicates.json"
    if entity_vocab_path is None:
        entity_vocab_path = path.parent / "entities.json"
    vocab = PredicateVocab.from_json_file(predicate_vocab_path)
    entity_vocab = tuple(_load_json_array(entity_vocab_path))

    raw = []  # (line_no, image_id, record dict, is_na)
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON: {exc}", path=path, line=line_no) from exc
            if not isinstance(obj, dict) or "image_id" not in obj:
                raise DatasetFormatError("image record needs 'image_id'", path=path, line=line_no)
            image_id = str(obj["image_id"])
            for rec in obj.get("relations", []):
                raw.append((line_no, image_id, rec, False))
            for rec in obj.get("na_pairs", []):
                raw.append((line_no, image_id, rec, True))

    used_ids = set()
    for line_no, _, rec, _ in raw:
        rid = rec.get("relation_id")
        if rid is not None:
            if not isinstance(rid, int):
                raise DatasetFormatError("relation_id must be an integer", path=path, line=line_no)
            if rid in used_ids:
                raise DatasetFormatError(f"duplicate relation_id {rid}", path=path, line=line_no)
            used_ids.add(rid)

    next_id = 0
    relations, na_pairs = [], []
    for line_no, image_id, rec, is_na in raw:
        rid = rec.get("relation_id")
        if rid is None:
            while next_id in used_ids:
                next_id += 1
            rid = next_id
            used_ids.add(rid)
        subject = _entity_from_json(rec.get("sub"), path, line_no)
        obj_ref = _entity_from_json(rec.get("obj"), path, line_no)
        provenance = Provenance(rec.get("provenance", "original"))
        if is_na:
            na_pairs.append(
                RelationInstance(rid, image_id, subject, obj_ref, None, provenance)
            )
        else:
            if "predicate" not in rec:
                raise DatasetFormatError("relation lacks 'predicate'", path=path, line=line_no)
            pred_idx = vocab.index(str(rec["predicate"]))
            relations.append(
                RelationInstance(rid, image_id, subject, obj_ref, pred_idx, provenance)
            )

    return Dataset(vocab, entity_vocab, relations, na_pairs).validate()


def save_dataset(dataset, path, predicate_vocab_path=None, entity_vocab_path=None):
    """Write a dataset in the canonical JSONL form (round-trips with load_dataset)."""
    path = Path(path)
    by_image = {img: {"relations": [], "na_pairs": []} for img in dataset.image_ids()}
    for rel in dataset.relations:
        by_image[rel.image_id]["relations"].append(rel)
    for rel in dataset.na_pairs:
        by_image[rel.image_id]["na_pairs"].append(rel)

    def entity_json(ref):
        return {"class": ref.class_label, "seg": ref.segment_id}

    with open(path, "w") as fh:
        for image_id, groups in by_image.items():
            obj = {"image_id": image_id, "relations": [], "na_pairs": []}
            for rel in groups["relations"]:
                obj["relations"].append(
                    {
                        "relation_id": rel.relation_id,
                        "sub": entity_json(rel.subject),
                        "obj": entity_json(rel.object),
                        "predicate": dataset.vocab.label(rel.predicate),
                        "provenance": rel.provenance.value,
                    }
                )
            for rel in groups["na_pairs"]:
                obj["na_pairs"].append(
                    {
                        "relation_id": rel.relation_id,
                        "sub": entity_json(rel.subject),
                        "obj": entity_json(rel.object),
                    }
                )
            fh.write(json.dumps(obj) + "\n")
    if predicate_vocab_path is not None:
        with open(predicate_vocab_path, "w") as fh:
            json.dump(list(dataset.vocab.labels), fh)
            fh.write("\n")
    if entity_vocab_path is not None:
        with open(entity_vocab_path, "w") as fh:
            json.dump(list(dataset.entity_vocab), fh)
            fh.write("\n")


def load_predictions(path, q):
    """Load a JSONL prediction file into {relation_id: PredictionRecord}."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("file not found", path=path)
    records = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON: {exc}", path=path, line=line_no) from exc
            try:
                rid = int(obj["relation_id"])
                scores = np.asarray(obj["scores"], dtype=np.float64)
                na_score = float(obj["na_score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"bad prediction record: {exc}", path=path, line=line_no) from exc
            if rid in records:
                raise DatasetFormatError(f"duplicate relation_id {rid}", path=path, line=line_no)
            if scores.shape != (q,):
                raise DatasetFormatError(
                    f"scores length {scores.shape} != Q={q}", path=path, line=line_no
                )
            if np.any(scores < 0) or np.any(scores > 1) or not np.all(np.isfinite(scores)):
                raise DatasetFormatError("scores must lie in [0, 1]", path=path, line=line_no)
            if not (0 < na_score <= 1):
                raise DatasetFormatError("na_score must lie in (0, 1]", path=path, line=line_no)
            records[rid] = PredictionRecord(rid, scores, na_score)
    return records


def save_predictions(records, path):
    with open(path, "w") as fh:
        for rec in records:
            obj = {
                "relation_id": rec.relation_id,
                "scores": [float(s) for s in rec.scores],
                "na_score": float(rec.na_score),
            }
            fh.write(json.dumps(obj) + "\n")


def load_confusion(path, vocab):
    """Load the Q x Q confusion matrix CSV; header must match the vocabulary order."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("file not found", path=path)
    q = len(vocab)
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise DatasetFormatError("empty confusion matrix file", path=path)
    header = [h.strip() for h in lines[0].split(",")]
    if tuple(header) != tuple(vocab.labels):
        raise DatasetFormatError(
            "confusion header does not match predicate vocabulary order", path=path, line=1
        )
    if len(lines) - 1 != q:
        raise DatasetFormatError(f"expected {q} rows, found {len(lines) - 1}", path=path)
    matrix = np.zeros((q, q), dtype=np.float64)
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != q:
            raise DatasetFormatError(f"expected {q} columns, found {len(parts)}", path=path, line=i)
        try:
            row = np.asarray([float(p) for p in parts], dtype=np.float64)
        except ValueError as exc:
            raise DatasetFormatError(f"bad float: {exc}", path=path, line=i) from exc
        if np.any(row < 0) or np.any(row > 1) or not np.all(np.isfinite(row)):
            raise DatasetFormatError("entries must lie in [0, 1]", path=path, line=i)
        matrix[i - 2] = row
    return matrix


def save_confusion(matrix, vocab, path):
    with open(path, "w") as fh:
        fh.write(",".join(vocab.labels) + "\n")
        for row in np.asarray(matrix, dtype=np.float64):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def identify_indistinguishable(dataset, predictions):
    """Relation ids whose model argmax disagrees with the annotation.

    ``predictions`` maps relation_id -> PredictionRecord and must cover every
    annotated relation; NA pairs are ignored here.
    """
    flagged = set()
    for rel in dataset.relations:
        rec = predictions.get(rel.relation_id)
        if rec is None:
            raise CoverageError(f"no prediction record for relation {rel.relation_id}")
        if rec.argmax() != rel.predicate:
            flagged.add(rel.relation_id)
    return flagged


def identify_potential_positives(dataset, predictions):
    """Pair each NA sample with its predicted predicate and NA score, in input order."""
    out = []
    for rel in dataset.na_pairs:
        rec = predictions.get(rel.relation_id)
        if rec is None:
            raise CoverageError(f"no prediction record for NA pair {rel.relation_id}")
        if rec.na_score <= 0:
            raise ValidationError(f"NA pair {rel.relation_id}: na_score must be positive")
        out.append((rel.relation_id, rec.argmax(), float(rec.na_score)))
    return out


def triplet_to_sentence(relation, vocab):
    """Render an annotated relation as its fixed template sentence."""
    if relation.is_na:
        raise ValidationError("cannot render an NA pair as a predicate sentence")
    return SENTENCE_TEMPLATE.format(
        subject=relation.subject.class_label,
        predicate=vocab.label(relation.predicate),
        object=relation.object.class_label,
    )


def na_pair_to_sentence(relation):
    """Render an NA pair with the neutral placeholder predicate."""
    return SENTENCE_TEMPLATE.format(
        subject=relation.subject.class_label,
        predicate=NA_PLACEHOLDER_PREDICATE,
        object=relation.object.class_label,
    )
