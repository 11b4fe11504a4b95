"""Predicate prototype space, invariance-scaled updates, and data filtration.

One prototype vector per predicate class is pulled toward the class's batch
average at a speed inversely proportional to the class's loss variance:
consistent classes move fast, noisy classes move cautiously.  After each
epoch, samples whose loss deviates too far from their class are flagged and
the worst of them are dropped from training.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ClassNeverSeenError, NumericalError, ValidationError

VAR_EPS = 1e-8


@dataclass
class PrototypeSpace:
    """Q prototypes of dimension L plus per-class invariance statistics."""

    prototypes: np.ndarray                 # (Q, L)
    class_counts_seen: np.ndarray          # (Q,) int
    v_aver: np.ndarray                     # (Q,) mean per-sample loss variance

    @classmethod
    def zeros(cls, num_classes, dim):
        return cls(
            prototypes=np.zeros((num_classes, dim)),
            class_counts_seen=np.zeros(num_classes, dtype=int),
            v_aver=np.zeros(num_classes),
        )

    @classmethod
    def from_embeddings(cls, encoded, labels, num_classes):
        """Initialize each prototype at its class mean; unseen classes stay zero."""
        encoded = np.asarray(encoded, dtype=np.float64)
        labels = np.asarray(labels)
        space = cls.zeros(num_classes, encoded.shape[1])
        for lab in np.unique(labels):
            sel = labels == lab
            space.prototypes[int(lab)] = encoded[sel].mean(axis=0)
            space.class_counts_seen[int(lab)] = int(sel.sum())
        return space


def batch_class_average(class_embeddings):
    """Mean embedding of one predicate class within a batch."""
    class_embeddings = np.asarray(class_embeddings, dtype=np.float64)
    if class_embeddings.ndim != 2 or len(class_embeddings) == 0:
        raise ValidationError("need at least one sample of the class")
    return class_embeddings.mean(axis=0)


def approach_speed(var_loss, n_class, gamma):
    """Scalar update speed 1 / (gamma * (Var + eps) * N); decreasing in Var."""
    if var_loss < 0 or n_class < 1 or gamma <= 0:
        raise ValidationError("need Var >= 0, N >= 1, gamma > 0")
    return 1.0 / (gamma * (var_loss + VAR_EPS) * n_class)


def update_prototype(space, class_idx, h_aver, var_loss, n_class, beta, gamma):
    """Move one prototype toward the batch class average.

    The step is (1 - beta) * speed * (H_aver - P) with the speed from
    approach_speed, capped so the prototype never overshoots H_aver: an
    uncapped speed diverges as Var -> 0 (the eps floor alone still allows
    steps of ~1e7 times the remaining distance).  H_aver = P is an exact
    fixed point for every parameter setting.
    """
    h_aver = np.asarray(h_aver, dtype=np.float64)
    step = min((1.0 - beta) * approach_speed(var_loss, n_class, gamma), 1.0)
    updated = space.prototypes[class_idx] + step * (h_aver - space.prototypes[class_idx])
    if not np.all(np.isfinite(updated)):
        raise NumericalError(f"prototype update for class {class_idx} is non-finite")
    space.prototypes[class_idx] = updated
    space.class_counts_seen[class_idx] += int(n_class)
    return space


def flag_biased(v_i, v_aver_class, shift_norm, mu):
    """True when a sample's loss variance exceeds the class threshold.

    Threshold = mu * V_aver * ||H_aver - P||; the distribution shift enters
    as its L2 norm.
    """
    if v_i < 0 or v_aver_class < 0 or shift_norm < 0:
        raise ValidationError("variance inputs must be nonnegative")
    return bool(v_i > mu * v_aver_class * shift_norm)


@dataclass
class FiltrationState:
    """Active/dropped bookkeeping across filtration stages."""

    active_ids: set
    dropped: list = field(default_factory=list)  # (epoch, relation_id, loss, reason)

    def drop(self, epoch, relation_id, loss, reason="filtration"):
        self.active_ids.discard(relation_id)
        self.dropped.append((int(epoch), int(relation_id), float(loss), reason))


def multistage_filtration(flagged, drop_percent, state, class_of, active_class_counts,
                          epoch, min_class_size=100):
    """Drop the top D% highest-loss flagged samples, protecting small classes.

    ``flagged`` is a list of (relation_id, loss).  The top ceil(D% * |flagged|)
    by loss are examined in order; a sample is dropped only while its class
    still has at least ``min_class_size`` active samples, so no drop ever
    happens in a class already below the floor.
    """
    if not 0 <= drop_percent <= 100:
        raise ValidationError("drop percent must lie in [0, 100]")
    if not flagged:
        return state
    ranked = sorted(flagged, key=lambda t: (-t[1], t[0]))
    n_target = math.ceil(drop_percent / 100.0 * len(ranked))
    for relation_id, loss in ranked[:n_target]:
        cls = class_of[relation_id]
        if active_class_counts[cls] < min_class_size:
            continue
        state.drop(epoch, relation_id, loss)
        active_class_counts[cls] -= 1
    return state


def similarity_matrix(space):
    """Cosine similarities between all prototypes (Q x Q, unit diagonal)."""
    protos = np.asarray(space.prototypes, dtype=np.float64)
    norms = np.linalg.norm(protos, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ClassNeverSeenError(f"class {bad} has a zero prototype (never seen)")
    unit = protos / norms[:, None]
    return np.clip(unit @ unit.T, -1.0, 1.0)


class PrototypeTracker:
    """Training observer: per-batch prototype updates plus per-epoch filtration.

    Wire into ContrastiveEncoder.fit(observer=...).  Prototype updates run per
    batch (or per epoch via ``update_cadence``); filtration always runs at
    epoch end.
    """

    def __init__(self, space, sample_ids, labels_by_id, mu=1.0, beta=0.9, gamma=1.5,
                 drop_percent=50.0, min_class_size=100, update_cadence="batch"):
        if update_cadence not in ("batch", "epoch"):
            raise ValidationError("update_cadence must be 'batch' or 'epoch'")
        self.space = space
        self.state = FiltrationState(active_ids=set(int(i) for i in sample_ids))
        self.labels_by_id = dict(labels_by_id)
        self.mu = mu
        self.beta = beta
        self.gamma = gamma
        self.drop_percent = drop_percent
        self.min_class_size = min_class_size
        self.update_cadence = update_cadence

    def _update_from(self, labels, encoded, losses):
        labels = np.asarray(labels)
        losses = np.asarray(losses, dtype=np.float64)
        for lab in np.unique(labels):
            sel = (labels == lab) & np.isfinite(losses)
            if not sel.any():
                continue
            h_aver = batch_class_average(encoded[sel])
            var_loss = float(np.var(losses[sel]))
            update_prototype(
                self.space, int(lab), h_aver, var_loss, int(sel.sum()),
                self.beta, self.gamma,
            )

    def on_batch(self, ids, labels, encoded, losses):
        if self.update_cadence == "batch":
            self._update_from(labels, encoded, losses)

    def after_epoch(self, epoch, ids, labels, losses, encoded):
        """Flag high-variance samples against the prototype shift and drop the worst."""
        ids = np.asarray(ids)
        labels = np.asarray(labels)
        losses = np.asarray(losses, dtype=np.float64)
        if self.update_cadence == "epoch":
            self._update_from(labels, encoded, losses)

        finite = np.isfinite(losses)
        v_i = np.full(len(ids), np.nan)
        shift = {}
        for lab in np.unique(labels):
            sel = (labels == lab) & finite
            if not sel.any():
                continue
            mean_loss = losses[sel].mean()
            v_i[sel] = (losses[sel] - mean_loss) ** 2
            self.space.v_aver[int(lab)] = float(np.mean(v_i[sel]))
            h_aver = batch_class_average(encoded[labels == lab])
            shift[int(lab)] = float(
                np.linalg.norm(h_aver - self.space.prototypes[int(lab)])
            )

        flagged = []
        for i in range(len(ids)):
            if not np.isfinite(v_i[i]):
                continue
            lab = int(labels[i])
            if flag_biased(float(v_i[i]), float(self.space.v_aver[lab]), shift[lab], self.mu):
                flagged.append((int(ids[i]), float(losses[i])))

        active_counts = {}
        for i in ids:
            lab = self.labels_by_id[int(i)]
            active_counts[lab] = active_counts.get(lab, 0) + 1
        before = set(self.state.active_ids)
        multistage_filtration(
            flagged, self.drop_percent, self.state, self.labels_by_id,
            active_counts, epoch, self.min_class_size,
        )
        return before - self.state.active_ids


def save_prototypes(space, vocab, path):
    with open(path, "w") as fh:
        fh.write(f"label,dim={space.prototypes.shape[1]}\n")
        for idx, label in enumerate(vocab.labels):
            vals = ",".join(repr(float(v)) for v in space.prototypes[idx])
            fh.write(f"{label},{vals}\n")


def load_prototypes(path, vocab):
    from .errors import DatasetFormatError

    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("label,dim="):
        raise DatasetFormatError("missing prototype header", path=path)
    dim = int(lines[0].split("dim=")[1])
    protos = np.zeros((len(vocab), dim))
    seen = set()
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        label = parts[0]
        idx = vocab.index(label)
        if idx in seen:
            raise DatasetFormatError(f"duplicate prototype row for {label!r}", path=path, line=line_no)
        seen.add(idx)
        if len(parts) != dim + 1:
            raise DatasetFormatError(f"expected {dim + 1} fields", path=path, line=line_no)
        protos[idx] = [float(p) for p in parts[1:]]
    if len(seen) != len(vocab):
        raise DatasetFormatError("prototype file does not cover the vocabulary", path=path)
    space = PrototypeSpace.zeros(len(vocab), dim)
    space.prototypes = protos
    return space


def save_filtration_log(state, path):
    with open(path, "w") as fh:
        fh.write("epoch,relation_id,loss,reason\n")
        for epoch, rid, loss, reason in state.dropped:
            fh.write(f"{epoch},{rid},{repr(loss)},{reason}\n")
