"""Margin + confusion-weighted InfoNCE with a loss-variance regularizer.

A linear projection over frozen base embeddings is trained so that
same-predicate sentences cluster and different-predicate sentences separate,
except where the confusion matrix marks two predicates as visually similar.
All gradients are analytic (plain numpy) so they stay hand-checkable against
finite differences.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .embedding import COSINE_EPS
from .errors import DegenerateBatchError, NumericalError, ValidationError


@dataclass
class TrainConfig:
    """Hyperparameters of the projection training loop."""

    temperature: float = 0.05
    margin: float = math.radians(10.0)
    lam: float = 0.3
    learning_rate: float = 2e-5
    epochs: int = 10
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0
    init_noise: float = 1e-3

    def validate(self):
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        # epochs = 0 is allowed: it leaves the parameters at initialization.
        if self.epochs < 0:
            raise ValidationError("epochs must be nonnegative")
        if self.batch_size < 2:
            raise ValidationError("batch size must be >= 2")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        return self


@dataclass
class LossBreakdown:
    """Per-batch loss terms; total = mean(per_sample_lm) + l_irm."""

    per_sample: np.ndarray          # one entry per anchor, NaN where skipped
    skipped: list
    per_class_variance: dict
    l_irm: float
    mean_lm: float
    total: float
    encoded: np.ndarray = field(repr=False, default=None)

    @property
    def per_sample_lm(self):
        vals = self.per_sample[np.isfinite(self.per_sample)]
        return [float(v) for v in vals]


def encode(weight, base):
    """Project one base embedding and L2-normalize."""
    u = np.asarray(weight, dtype=np.float64) @ np.asarray(base, dtype=np.float64)
    norm = np.linalg.norm(u)
    if norm == 0.0:
        raise ValidationError("projection produced the zero vector")
    return u / norm


def encode_matrix(weight, base_rows):
    u = np.asarray(base_rows, dtype=np.float64) @ np.asarray(weight, dtype=np.float64).T
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValidationError(f"projection of row {bad} is the zero vector")
    return u / norms[:, None], norms


def _clamped_cosines(h):
    """Pairwise cosines of unit rows, clamped away from +-1; returns (clamped, pass_mask)."""
    raw = np.clip(h @ h.T, -1.0, 1.0)
    clamped = np.clip(raw, -1.0 + COSINE_EPS, 1.0 - COSINE_EPS)
    pass_mask = np.abs(raw) < 1.0 - COSINE_EPS
    return clamped, pass_mask


def positive_mass(anchor, positives, margin, temperature):
    """f_pos = sum_j exp(cos(theta_j + m) / T) over the anchor's positive set."""
    if len(positives) == 0:
        raise DegenerateBatchError("anchor has an empty positive set")
    total = 0.0
    for p in positives:
        theta = _pair_angle(anchor, p)
        total += math.exp(math.cos(theta + margin) / temperature)
    return total


def negative_mass(anchor, anchor_predicate, negatives, confusion, temperature):
    """f_neg = sum_g (1 - C[p_i][p_g]) * exp(cos(theta_g) / T); empty set gives 0."""
    confusion = np.asarray(confusion, dtype=np.float64)
    total = 0.0
    for vec, pred in negatives:
        weight = 1.0 - confusion[anchor_predicate, pred]
        theta = _pair_angle(anchor, vec)
        total += weight * math.exp(math.cos(theta) / temperature)
    return total


def _pair_angle(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    c = min(max(c, -1.0 + COSINE_EPS), 1.0 - COSINE_EPS)
    return math.acos(c)


def _forward(h, labels, confusion, margin, temperature):
    """Vectorized per-anchor masses and losses over encoded unit vectors.

    Returns (per_sample, f_pos, f_neg, pos_exp, neg_exp, cos_clamped, pass_mask,
    pos_mask, neg_weights).  per_sample is NaN for anchors without positives.
    """
    n = len(labels)
    labels = np.asarray(labels)
    cos_c, pass_mask = _clamped_cosines(h)
    off_diag = ~np.eye(n, dtype=bool)
    same = (labels[:, None] == labels[None, :]) & off_diag
    diff = (~(labels[:, None] == labels[None, :])) & off_diag

    theta = np.arccos(cos_c)
    pos_exp = np.where(same, np.exp(np.cos(theta + margin) / temperature), 0.0)
    neg_weights = np.where(diff, 1.0 - confusion[labels[:, None], labels[None, :]], 0.0)
    neg_exp = neg_weights * np.where(diff, np.exp(cos_c / temperature), 0.0)

    f_pos = pos_exp.sum(axis=1)
    f_neg = neg_exp.sum(axis=1)
    has_pos = same.any(axis=1)
    per_sample = np.full(n, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_sample[has_pos] = np.log1p(f_neg[has_pos] / f_pos[has_pos])
    return per_sample, f_pos, f_neg, pos_exp, neg_exp, cos_c, pass_mask, same, neg_weights


def infonce_losses(vectors, labels, confusion=None, margin=math.radians(10.0),
                   temperature=0.05):
    """Per-anchor margin InfoNCE losses for a batch of (vector, predicate) pairs.

    Anchors without a same-predicate partner are skipped (NaN in the result);
    a batch where every anchor is skipped raises DegenerateBatchError.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or len(vectors) < 2:
        raise ValidationError("need a 2-D batch with at least 2 samples")
    labels = np.asarray(labels)
    if confusion is None:
        q = int(labels.max()) + 1
        confusion = np.zeros((q, q))
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise ValidationError("zero vector in batch")
    h = vectors / norms[:, None]
    per_sample = _forward(h, labels, np.asarray(confusion, dtype=np.float64),
                          margin, temperature)[0]
    if not np.any(np.isfinite(per_sample)):
        raise DegenerateBatchError("every anchor in the batch lacks a positive")
    return per_sample


def irm_regularizer(per_sample, labels, lam):
    """Sum over samples of lam * population variance of their class's losses.

    NaN entries (skipped anchors) contribute nothing and are excluded from
    the class statistics; singleton classes have zero variance.
    """
    per_sample = np.asarray(per_sample, dtype=np.float64)
    labels = np.asarray(labels)
    total = 0.0
    for lab in np.unique(labels):
        vals = per_sample[(labels == lab) & np.isfinite(per_sample)]
        if len(vals) == 0:
            continue
        total += lam * len(vals) * float(np.var(vals))
    return float(total)


def per_class_variances(per_sample, labels):
    per_sample = np.asarray(per_sample, dtype=np.float64)
    labels = np.asarray(labels)
    out = {}
    for lab in np.unique(labels):
        vals = per_sample[(labels == lab) & np.isfinite(per_sample)]
        if len(vals):
            out[int(lab)] = float(np.var(vals))
    return out


def loss_and_gradient(weight, base, labels, confusion, cfg):
    """Total loss (mean margin-InfoNCE + variance regularizer) and its gradient.

    The gradient is the exact analytic derivative with respect to the
    projection matrix, including the paths through normalization, cosine,
    the clamped arccos, the angular margin, and the variance terms.
    """
    weight = np.asarray(weight, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    labels = np.asarray(labels)
    confusion = np.asarray(confusion, dtype=np.float64)
    n = len(labels)
    if n < 2:
        raise ValidationError("batch size must be >= 2")

    h, norms = encode_matrix(weight, base)
    (per_sample, f_pos, f_neg, pos_exp, neg_exp, cos_c, pass_mask, same,
     neg_weights) = _forward(h, labels, confusion, cfg.margin, cfg.temperature)

    finite = np.isfinite(per_sample)
    if not finite.any():
        raise DegenerateBatchError("every anchor in the batch lacks a positive")
    m_active = int(finite.sum())
    mean_lm = float(per_sample[finite].mean())
    l_irm = irm_regularizer(per_sample, labels, cfg.lam)
    total = mean_lm + l_irm

    if not np.isfinite(total):
        bad = int(np.flatnonzero(~np.isfinite(per_sample) & finite)[0]) if finite.any() else 0
        raise NumericalError(f"non-finite loss at anchor {bad}")

    # d total / d loss_i = 1/M + 2*lam*(loss_i - classmean_i); zero for skipped.
    dtot_dl = np.zeros(n)
    dtot_dl[finite] = 1.0 / m_active
    for lab in np.unique(labels):
        sel = (labels == lab) & finite
        if sel.any():
            dtot_dl[sel] += 2.0 * cfg.lam * (per_sample[sel] - per_sample[sel].mean())

    inv_t = 1.0 / cfg.temperature
    denom = f_pos + f_neg
    with np.errstate(invalid="ignore", divide="ignore"):
        coeff_pos = np.where(finite, dtot_dl * (-1.0 / f_pos + 1.0 / denom), 0.0)
        coeff_neg = np.where(finite, dtot_dl * (1.0 / denom), 0.0)

    # d cos(theta + m) / d cos(theta) = cos(m) + sin(m) * c / sqrt(1 - c^2)
    sin_theta = np.sqrt(np.maximum(1.0 - cos_c**2, 0.0))
    dmargin = math.cos(cfg.margin) + math.sin(cfg.margin) * cos_c / sin_theta

    a = coeff_pos[:, None] * pos_exp * inv_t * dmargin
    a = np.where(same, a, 0.0)
    a += coeff_neg[:, None] * neg_exp * inv_t
    a *= pass_mask  # clamped cosines have zero sensitivity

    pair = a + a.T  # each unordered pair feeds both anchors' losses
    row = (pair * cos_c).sum(axis=1)
    g_u = (pair @ h - h * row[:, None]) / norms[:, None]
    grad = g_u.T @ base

    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(g_u).all(axis=1))[0])
        raise NumericalError(f"non-finite gradient contribution at anchor {bad}")

    breakdown = LossBreakdown(
        per_sample=per_sample,
        skipped=[int(i) for i in np.flatnonzero(~finite)],
        per_class_variance=per_class_variances(per_sample, labels),
        l_irm=l_irm,
        mean_lm=mean_lm,
        total=total,
        encoded=h,
    )
    return breakdown, grad


def initial_weight(projected_dim, base_dim, seed, noise=1e-3):
    """Identity-padded matrix plus small Gaussian noise (seeded)."""
    rng = np.random.default_rng(seed)
    w = np.zeros((projected_dim, base_dim))
    k = min(projected_dim, base_dim)
    w[:k, :k] = np.eye(k)
    return w + noise * rng.standard_normal((projected_dim, base_dim))


def build_batches(indices, labels, batch_size, rng):
    """Class-aware batches: same-class pairs are kept together so most anchors
    have a positive; batches lacking any pair are merged into a neighbor."""
    indices = np.asarray(indices)
    labels = np.asarray(labels)
    units = []
    for lab in np.unique(labels[indices] if len(indices) else labels):
        members = indices[labels[indices] == lab]
        members = members[rng.permutation(len(members))]
        for k in range(0, len(members) - 1, 2):
            units.append([int(members[k]), int(members[k + 1])])
        if len(members) % 2:
            units.append([int(members[-1])])
    order = rng.permutation(len(units))
    units = [units[i] for i in order]

    packed, cur = [], []
    for unit in units:
        cur.extend(unit)
        if len(cur) >= batch_size:
            packed.append(cur)
            cur = []
    if cur:
        packed.append(cur)

    def has_pair(batch):
        _, counts = np.unique(labels[batch], return_counts=True)
        return bool((counts >= 2).any())

    merged, pending = [], []
    for batch in packed:
        batch = pending + batch
        pending = []
        if has_pair(batch):
            merged.append(batch)
        else:
            pending = batch
    if pending:
        if merged:
            merged[-1].extend(pending)
        else:
            merged = [pending]
    return merged


class ContrastiveEncoder(BaseEstimator, TransformerMixin):
    """Linear projection trained with the margin/confusion InfoNCE objective.

    fit(X, y) runs seeded mini-batch gradient descent over the active samples
    and exposes the learned matrix as ``weight_``.  transform(X) returns the
    L2-normalized projections.  An observer with ``on_batch`` /
    ``after_epoch`` callbacks can track prototypes and drop samples between
    epochs (multistage filtration); dropped samples never rejoin.
    """

    def __init__(self, projected_dim=None, temperature=0.05, margin_degrees=10.0,
                 lam=0.3, learning_rate=2e-5, epochs=10, batch_size=32,
                 momentum=0.9, seed=0, init_noise=1e-3):
        self.projected_dim = projected_dim
        self.temperature = temperature
        self.margin_degrees = margin_degrees
        self.lam = lam
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.seed = seed
        self.init_noise = init_noise

    def _config(self):
        return TrainConfig(
            temperature=self.temperature,
            margin=math.radians(self.margin_degrees),
            lam=self.lam,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            momentum=self.momentum,
            seed=self.seed,
            init_noise=self.init_noise,
        ).validate()

    def fit(self, X, y, confusion=None, sample_ids=None, observer=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or len(X) != len(y):
            raise ValidationError("X must be 2-D with one label per row")
        cfg = self._config()
        n, base_dim = X.shape
        q = int(y.max()) + 1 if confusion is None else len(confusion)
        confusion = np.zeros((q, q)) if confusion is None else np.asarray(confusion, dtype=np.float64)
        if sample_ids is None:
            sample_ids = np.arange(n)
        sample_ids = np.asarray(sample_ids)

        proj_dim = self.projected_dim or base_dim
        weight = initial_weight(proj_dim, base_dim, cfg.seed, cfg.init_noise)
        velocity = np.zeros_like(weight)
        rng = np.random.default_rng(cfg.seed)

        active = np.arange(n)
        trace = []
        epoch_losses = {}
        for epoch in range(cfg.epochs):
            if not self._can_pair(y[active]):
                raise DegenerateBatchError(
                    "no active predicate class has two or more samples"
                )
            batches = build_batches(active, y, cfg.batch_size, rng)
            epoch_losses = {}
            lm_values, irm_values = [], []
            for batch in batches:
                batch = np.asarray(batch)
                breakdown, grad = loss_and_gradient(weight, X[batch], y[batch], confusion, cfg)
                velocity = cfg.momentum * velocity + grad
                weight = weight - cfg.learning_rate * velocity
                lm_values.extend(breakdown.per_sample_lm)
                irm_values.append(breakdown.l_irm)
                for pos, loss in zip(batch, breakdown.per_sample):
                    if np.isfinite(loss):
                        epoch_losses[int(sample_ids[pos])] = float(loss)
                if observer is not None:
                    observer.on_batch(
                        ids=sample_ids[batch],
                        labels=y[batch],
                        encoded=breakdown.encoded,
                        losses=breakdown.per_sample,
                    )
            trace.append(
                {
                    "epoch": epoch,
                    "mean_lm": float(np.mean(lm_values)) if lm_values else 0.0,
                    "l_irm": float(np.mean(irm_values)) if irm_values else 0.0,
                    "active_sample_count": int(len(active)),
                }
            )
            if observer is not None:
                encoded_all, _ = encode_matrix(weight, X[active])
                drop = observer.after_epoch(
                    epoch=epoch,
                    ids=sample_ids[active],
                    labels=y[active],
                    losses=np.asarray(
                        [epoch_losses.get(int(sample_ids[i]), np.nan) for i in active]
                    ),
                    encoded=encoded_all,
                )
                if drop:
                    drop = set(int(d) for d in drop)
                    keep = [i for i in active if int(sample_ids[i]) not in drop]
                    active = np.asarray(keep, dtype=int)

        self.weight_ = weight
        self.loss_trace_ = trace
        self.n_features_in_ = base_dim
        self.projected_dim_ = proj_dim
        self.active_ids_ = [int(sample_ids[i]) for i in active]
        self.epoch_losses_ = epoch_losses
        return self

    @staticmethod
    def _can_pair(labels):
        _, counts = np.unique(labels, return_counts=True)
        return bool((counts >= 2).any())

    def transform(self, X):
        check_is_fitted(self, "weight_")
        X = np.asarray(X, dtype=np.float64)
        return encode_matrix(self.weight_, X)[0]
