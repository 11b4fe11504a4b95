"""Base sentence embeddings and similarity primitives.

Embeddings either come from an external CSV (pretrained-model exports) or
from the built-in deterministic featurizer: a signed-hash bag of word
unigrams and bigrams projected into a fixed dimension and L2-normalized.
"""

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import CoverageError, DatasetFormatError, ValidationError

# Keeps arccos (and its gradient) finite at the +-1 poles.
COSINE_EPS = 1e-6

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _hash_token(token, seed):
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=16, key=str(seed).encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "big"), int.from_bytes(digest[8:], "big")


def featurize(sentence, dim, seed):
    """Deterministic signed-hash embedding of one sentence.

    Unigrams and adjacent bigrams each contribute +-1 to one seed-hashed
    coordinate; the result is L2-normalized.
    """
    if dim < 2:
        raise ValidationError("embedding dim must be >= 2")
    tokens = _TOKEN_RE.findall(sentence.lower())
    if not tokens:
        raise ValidationError("cannot featurize an empty sentence")
    grams = list(tokens)
    grams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    vec = np.zeros(dim, dtype=np.float64)
    for gram in grams:
        idx_bits, sign_bits = _hash_token(gram, seed)
        vec[idx_bits % dim] += 1.0 if sign_bits % 2 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # Possible only if signed collisions cancel every coordinate.
        raise ValidationError("sentence hashed to the zero vector")
    return vec / norm


def cosine_similarity(a, b):
    """Cosine of two vectors, clamped into [-1 + eps, 1 - eps]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity undefined for a zero vector")
    c = float(np.dot(a, b) / (na * nb))
    return float(np.clip(c, -1.0 + COSINE_EPS, 1.0 - COSINE_EPS))


def arc_angle(a, b):
    """Angle in radians between two vectors (arccos of the clamped cosine)."""
    return float(np.arccos(cosine_similarity(a, b)))


@dataclass
class EmbeddingTable:
    """Immutable map relation_id -> base embedding, all of one dimension."""

    dim: int
    rows: dict

    def __post_init__(self):
        for rid, vec in self.rows.items():
            if vec.shape != (self.dim,):
                raise ValidationError(f"row {rid} has dim {vec.shape}, expected ({self.dim},)")

    def get(self, relation_id):
        try:
            return self.rows[relation_id]
        except KeyError:
            raise CoverageError(f"no embedding for relation {relation_id}") from None

    def matrix(self, relation_ids):
        """Stack rows for the given ids into an (n, dim) array."""
        return np.stack([self.get(rid) for rid in relation_ids])

    def __len__(self):
        return len(self.rows)


def load_embeddings(path):
    """Read the embedding CSV: '#' comments, then 'relation_id,dim=<L>', then rows."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("file not found", path=path)
    dim = None
    rows = {}
    with open(path) as fh:
        lines = fh.readlines()
    body_start = None
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = re.fullmatch(r"relation_id,dim=(\d+)", stripped)
        if not m:
            raise DatasetFormatError(
                f"expected header 'relation_id,dim=<L>', found {stripped!r}",
                path=path,
                line=i + 1,
            )
        dim = int(m.group(1))
        body_start = i + 1
        break
    if dim is None:
        raise DatasetFormatError("missing embedding header", path=path)
    if dim < 2:
        raise DatasetFormatError("embedding dim must be >= 2", path=path)
    for line_no, line in enumerate(lines[body_start:], start=body_start + 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split(",")
        if len(parts) != dim + 1:
            raise DatasetFormatError(
                f"expected {dim + 1} fields, found {len(parts)}", path=path, line=line_no
            )
        try:
            rid = int(parts[0])
            vec = np.asarray([float(p) for p in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise DatasetFormatError(f"bad value: {exc}", path=path, line=line_no) from exc
        if not np.all(np.isfinite(vec)):
            raise DatasetFormatError("non-finite embedding entry", path=path, line=line_no)
        if rid in rows:
            raise DatasetFormatError(f"duplicate relation_id {rid}", path=path, line=line_no)
        rows[rid] = vec
    return EmbeddingTable(dim=dim, rows=rows)


def save_embeddings(table, path, comments=()):
    """Write an EmbeddingTable in the canonical decimal-text CSV form."""
    with open(path, "w") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        fh.write(f"relation_id,dim={table.dim}\n")
        for rid in sorted(table.rows):
            vals = ",".join(repr(float(v)) for v in table.rows[rid])
            fh.write(f"{rid},{vals}\n")


class HashingSentenceEncoder(BaseEstimator, TransformerMixin):
    """Stateless sklearn-style transformer over lists of sentences."""

    def __init__(self, dim=256, seed=0):
        self.dim = dim
        self.seed = seed

    def fit(self, X, y=None):
        if self.dim < 2:
            raise ValidationError("embedding dim must be >= 2")
        return self

    def transform(self, X):
        return np.stack([featurize(s, self.dim, self.seed) for s in X])
