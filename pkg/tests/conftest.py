"""Shared synthetic dataset builders."""

import json

import numpy as np
import pytest

from predbias.corpus import (
    Dataset,
    EntityRef,
    PredicateVocab,
    PredictionRecord,
    RelationInstance,
)

PREDICATES3 = ("on", "standing on", "beside")
ENTITIES = ("person", "dog", "snow", "tree", "road", "sky")


def make_relation(rid, image_id, sub_class, obj_class, predicate, seg_offset=0):
    return RelationInstance(
        relation_id=rid,
        image_id=image_id,
        subject=EntityRef(sub_class, f"seg{seg_offset}"),
        object=EntityRef(obj_class, f"seg{seg_offset + 1}"),
        predicate=predicate,
    )


def make_dataset(num_images=3, relations_per_image=2, na_per_image=1, q=3):
    """Small deterministic dataset cycling through predicates and entities."""
    vocab = PredicateVocab(PREDICATES3[:q])
    relations, na_pairs = [], []
    rid = 0
    for img in range(num_images):
        image_id = f"img{img}"
        for k in range(relations_per_image):
            relations.append(
                make_relation(
                    rid, image_id,
                    ENTITIES[(img + k) % len(ENTITIES)],
                    ENTITIES[(img + k + 1) % len(ENTITIES)],
                    (img + k) % q,
                    seg_offset=2 * k,
                )
            )
            rid += 1
        for k in range(na_per_image):
            rel = make_relation(
                rid, image_id,
                ENTITIES[(img + k + 2) % len(ENTITIES)],
                ENTITIES[(img + k + 3) % len(ENTITIES)],
                None,
                seg_offset=2 * (relations_per_image + k),
            )
            na_pairs.append(rel)
            rid += 1
    return Dataset(vocab, ENTITIES, relations, na_pairs).validate()


def agreeing_predictions(dataset, na_score=0.9):
    """One record per relation whose argmax equals the annotation."""
    q = len(dataset.vocab)
    records = {}
    for rel in dataset.relations:
        scores = np.full(q, 0.1)
        scores[rel.predicate] = 0.9
        records[rel.relation_id] = PredictionRecord(rel.relation_id, scores, na_score)
    for rel in dataset.na_pairs:
        scores = np.full(q, 0.1)
        scores[rel.relation_id % q] = 0.8
        records[rel.relation_id] = PredictionRecord(rel.relation_id, scores, 0.3)
    return records


def write_dataset_files(dataset, dirpath, stem="dataset"):
    """Write JSONL + sidecars in the on-disk schema; returns the dataset path."""
    by_image = {}
    for rel in dataset.relations:
        by_image.setdefault(rel.image_id, {"relations": [], "na_pairs": []})[
            "relations"
        ].append(rel)
    for rel in dataset.na_pairs:
        by_image.setdefault(rel.image_id, {"relations": [], "na_pairs": []})[
            "na_pairs"
        ].append(rel)
    path = dirpath / f"{stem}.jsonl"
    with open(path, "w") as fh:
        for image_id, groups in by_image.items():
            obj = {
                "image_id": image_id,
                "relations": [
                    {
                        "relation_id": r.relation_id,
                        "sub": {"class": r.subject.class_label, "seg": r.subject.segment_id},
                        "obj": {"class": r.object.class_label, "seg": r.object.segment_id},
                        "predicate": dataset.vocab.label(r.predicate),
                    }
                    for r in groups["relations"]
                ],
                "na_pairs": [
                    {
                        "relation_id": r.relation_id,
                        "sub": {"class": r.subject.class_label, "seg": r.subject.segment_id},
                        "obj": {"class": r.object.class_label, "seg": r.object.segment_id},
                    }
                    for r in groups["na_pairs"]
                ],
            }
            fh.write(json.dumps(obj) + "\n")
    with open(dirpath / "predicates.json", "w") as fh:
        json.dump(list(dataset.vocab.labels), fh)
    with open(dirpath / "entities.json", "w") as fh:
        json.dump(list(dataset.entity_vocab), fh)
    return path


@pytest.fixture
def tiny_dataset():
    return make_dataset()


def build_pipeline_inputs(dirpath, num_relations=200, num_na=20, q=4,
                          flag_count=10, seed=0, epochs=2, config_overrides=None):
    """Write a complete input fixture (dataset, predictions, confusion, config).

    Predicate frequencies are uneven so the head-to-tail direction constraint
    can fire; ``flag_count`` relations annotated with predicate 0 get model
    predictions favoring predicate 1.
    """
    from predbias.corpus import (
        PredicateVocab,
        save_confusion,
        save_predictions,
    )

    rng = np.random.default_rng(seed)
    predicates = ("on", "standing on", "beside", "looking at")[:q]
    vocab = PredicateVocab(predicates)
    weights = np.array([0.4, 0.2, 0.25, 0.15][:q])
    weights = weights / weights.sum()

    relations, na_pairs = [], []
    rid = 0
    per_image = 4
    img = 0
    while rid < num_relations:
        image_id = f"img{img}"
        for k in range(per_image):
            if rid >= num_relations:
                break
            pred = int(rng.choice(q, p=weights))
            relations.append(
                RelationInstance(
                    rid, image_id,
                    EntityRef(ENTITIES[int(rng.integers(len(ENTITIES)))], f"s{2 * k}"),
                    EntityRef(ENTITIES[int(rng.integers(len(ENTITIES)))], f"s{2 * k + 1}"),
                    pred,
                )
            )
            rid += 1
        img += 1
    for k in range(num_na):
        image_id = f"img{k % img}"
        na_pairs.append(
            RelationInstance(
                rid, image_id,
                EntityRef(ENTITIES[int(rng.integers(len(ENTITIES)))], f"n{2 * k}"),
                EntityRef(ENTITIES[int(rng.integers(len(ENTITIES)))], f"n{2 * k + 1}"),
                None,
            )
        )
        rid += 1
    dataset = Dataset(vocab, ENTITIES, relations, na_pairs).validate()

    records = []
    class0 = [r for r in relations if r.predicate == 0]
    flagged_ids = {r.relation_id for r in class0[:flag_count]}
    for rel in relations:
        scores = np.full(q, 0.05)
        if rel.relation_id in flagged_ids:
            scores[1] = 0.5 + 0.4 * float(rng.random())
        else:
            scores[rel.predicate] = 0.9
        records.append(PredictionRecord(rel.relation_id, scores, 0.95))
    for rel in na_pairs:
        scores = np.full(q, 0.05)
        scores[int(rng.integers(q))] = 0.7
        records.append(PredictionRecord(rel.relation_id, scores, float(rng.uniform(0.1, 0.6))))

    dataset_path = write_dataset_files(dataset, dirpath)
    save_predictions(records, dirpath / "predictions.jsonl")
    confusion = np.full((q, q), 0.05)
    np.fill_diagonal(confusion, 1.0)
    confusion[0, 1] = confusion[1, 0] = 0.8
    save_confusion(confusion, vocab, dirpath / "confusion.csv")

    config = {
        "seed": seed,
        "paths": {
            "dataset": dataset_path.name,
            "predicate_vocab": "predicates.json",
            "entity_vocab": "entities.json",
            "predictions": "predictions.jsonl",
            "confusion": "confusion.csv",
        },
        "embedding": {"dim": 64, "featurizer_seed": seed},
        "train": {"epochs": epochs, "batch_size": 16, "learning_rate": 1e-3},
        "transfer": {"direction_constraint": True},
        # full-dataset-scale t would repeat desk-scale images millions of times
        "resample": {"t": 100.0},
    }
    for section, values in (config_overrides or {}).items():
        if isinstance(values, dict):
            config.setdefault(section, {}).update(values)
        else:
            config[section] = values
    config_path = dirpath / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return {
        "dataset": dataset,
        "config": config_path,
        "flagged_ids": flagged_ids,
        "num_na": num_na,
    }
