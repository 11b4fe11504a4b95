"""Render relation sentences and encode them with a pretrained language model.

Output is the embedding CSV the debiasing pipeline ingests: optional '#'
comment lines recording model and pooling, a 'relation_id,dim=<L>' header,
then one 'relation_id,v1,...,vL' row per relation and NA pair.
"""

import json
from pathlib import Path

import numpy as np

# Must stay in sync with the pipeline's sentence rendering.
SENTENCE_TEMPLATE = "The {subject} is {predicate} the {object}."
NA_PLACEHOLDER_PREDICATE = "related to"


class ExportError(Exception):
    pass


class ModelLoadError(ExportError):
    pass


def read_sentences(dataset_path):
    """Parse the dataset JSONL into ordered (relation_id, sentence) pairs.

    Records without a relation_id get the smallest unused ids in file order,
    matching the pipeline's assignment rule so the two sides stay aligned.
    """
    dataset_path = Path(dataset_path)
    if not dataset_path.exists():
        raise ExportError(f"dataset file not found: {dataset_path}")
    raw = []
    with open(dataset_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExportError(f"{dataset_path}:{line_no}: invalid JSON: {exc}") from exc
            for rec in obj.get("relations", []):
                raw.append((line_no, rec, False))
            for rec in obj.get("na_pairs", []):
                raw.append((line_no, rec, True))

    used = {rec.get("relation_id") for _, rec, _ in raw if rec.get("relation_id") is not None}
    next_id = 0
    out = []
    for line_no, rec, is_na in raw:
        rid = rec.get("relation_id")
        if rid is None:
            while next_id in used:
                next_id += 1
            rid = next_id
            used.add(rid)
        try:
            subject = rec["sub"]["class"]
            obj_class = rec["obj"]["class"]
            predicate = NA_PLACEHOLDER_PREDICATE if is_na else rec["predicate"]
        except (KeyError, TypeError) as exc:
            raise ExportError(f"{dataset_path}:{line_no}: bad record: {exc}") from exc
        out.append(
            (int(rid), SENTENCE_TEMPLATE.format(subject=subject, predicate=predicate,
                                                object=obj_class))
        )
    return out


class SentenceEmbedder:
    """Batch encoder over a local or cached pretrained transformer."""

    def __init__(self, model_name, pooling="mean", batch_size=32):
        if pooling not in ("cls", "mean"):
            raise ExportError(f"unknown pooling {pooling!r}, expected 'cls' or 'mean'")
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ModelLoadError(f"transformers is not available: {exc}") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModel.from_pretrained(model_name)
        except Exception as exc:
            raise ModelLoadError(f"cannot load model {model_name!r}: {exc}") from exc
        self.model.eval()
        self.pooling = pooling
        self.batch_size = batch_size
        self.dim = int(self.model.config.hidden_size)

    def encode(self, sentences):
        import torch

        chunks = []
        with torch.no_grad():
            for start in range(0, len(sentences), self.batch_size):
                batch = sentences[start:start + self.batch_size]
                tokens = self.tokenizer(
                    batch, padding=True, truncation=True, return_tensors="pt")
                hidden = self.model(**tokens).last_hidden_state
                if self.pooling == "cls":
                    pooled = hidden[:, 0]
                else:
                    mask = tokens["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                    pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1)
                chunks.append(pooled.to(torch.float64).cpu().numpy())
        return np.vstack(chunks) if chunks else np.zeros((0, self.dim))


def export(dataset_path, model_name, pooling, out_path, expect_dim=None, batch_size=32):
    """Encode every relation and NA pair; returns the number of rows written."""
    pairs = read_sentences(dataset_path)
    embedder = SentenceEmbedder(model_name, pooling=pooling, batch_size=batch_size)
    if expect_dim is not None and embedder.dim != expect_dim:
        raise ExportError(
            f"model hidden size {embedder.dim} does not match expected dim {expect_dim}")
    ids = [rid for rid, _ in pairs]
    if len(set(ids)) != len(ids):
        raise ExportError("duplicate relation ids in dataset")
    matrix = embedder.encode([s for _, s in pairs])
    order = np.argsort(ids)
    with open(out_path, "w") as fh:
        fh.write(f"# model={model_name}\n")
        fh.write(f"# pooling={pooling}\n")
        fh.write(f"relation_id,dim={embedder.dim}\n")
        for i in order:
            vals = ",".join(repr(float(v)) for v in matrix[i])
            fh.write(f"{ids[i]},{vals}\n")
    return len(ids)
