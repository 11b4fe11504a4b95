"""Repeat-factor resampling of the enhanced dataset.

Each triplet gets R = max(1, t * pair_scarcity * predicate_scarcity); an
image repeats by the max over its triplets, with the fractional part
realized by a seeded Bernoulli draw so the expected count equals R.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class RepeatPlan:
    per_image: dict           # image_id -> repeat factor >= 1

    def validate(self):
        for image_id, r in self.per_image.items():
            if r < 1:
                raise ValidationError(f"image {image_id}: repeat factor {r} < 1")
        return self


def triplet_repeat_factor(c_pair, c_pred, t):
    if c_pair <= 0 or c_pred <= 0:
        raise ValidationError("scarcities must be positive")
    if t <= 0:
        raise ValidationError("t must be positive")
    return max(1.0, t * c_pair * c_pred)


def image_repeat_factor(relations, scarcity, t):
    """Max triplet repeat factor over one image; 1.0 for a relation-less image."""
    best = 1.0
    for rel in relations:
        c_pair = scarcity.pair_scarcity(rel.subject.class_label, rel.object.class_label)
        c_pred = scarcity.predicate_scarcity(rel.predicate)
        best = max(best, triplet_repeat_factor(c_pair, c_pred, t))
    return best


def compute_repeat_plan(dataset, scarcity, t):
    by_image = dataset.relations_by_image()
    return RepeatPlan(
        per_image={img: image_repeat_factor(rels, scarcity, t) for img, rels in by_image.items()}
    ).validate()


def _image_rng(seed, image_id):
    digest = hashlib.blake2b(
        image_id.encode("utf-8"), digest_size=8, key=str(seed).encode("utf-8")
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def materialize(per_image, seed):
    """Expand repeat factors into a shuffled index of image ids.

    Each image appears floor(R) times plus one more with probability frac(R);
    the extra draw uses a per-image derived seed, so the result does not
    depend on iteration order.
    """
    expanded = []
    for image_id, r in per_image.items():
        if r < 1:
            raise ValidationError(f"image {image_id}: repeat factor {r} < 1")
        count = int(np.floor(r))
        frac = r - count
        if frac > 0 and _image_rng(seed, image_id).random() < frac:
            count += 1
        expanded.extend([image_id] * count)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(expanded))
    return [expanded[i] for i in order]


def save_index(index, path):
    with open(path, "w") as fh:
        for image_id in index:
            fh.write(f"{image_id}\n")
