"""Stage orchestration: ingest -> identify -> embed -> train -> prototypes
-> transfer -> resample -> audit.

Every stage reads only files under the output directory (ingest copies the
raw inputs there first), so stages are independently re-runnable.  Outputs
are staged with a .partial suffix and renamed on stage success.
"""

import json
import logging
import math
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from . import corpus, embedding, prototype, resample, transfer
from .contrastive import ContrastiveEncoder, encode_matrix, initial_weight
from .errors import CoverageError, DatasetFormatError, MissingArtifactError, StageError
from .prototype import PrototypeSpace, PrototypeTracker

log = logging.getLogger("predbias")

DATASET = "dataset.jsonl"
PREDICATES = "predicates.json"
ENTITIES = "entities.json"
PREDICTIONS = "predictions.jsonl"
CONFUSION = "confusion.csv"
FLAGGED = "flagged.json"
NA_CANDIDATES = "na_candidates.jsonl"
EMBEDDINGS = "embeddings.csv"
ENCODER = "encoder.csv"
LOSS_TRACE = "loss_trace.csv"
PROTOTYPES = "prototypes.csv"
FILTRATION = "filtration.csv"
SIMILARITY = "similarity.csv"
PLAN = "plan.jsonl"
ENHANCED = "dataset.enhanced.jsonl"
INDEX = "index.txt"
REPORT = "report.csv"
SUMMARY = "summary.json"


class _StageOutputs:
    """Collects .partial files and renames them on commit."""

    def __init__(self, outdir):
        self.outdir = Path(outdir)
        self._staged = []

    def path(self, name):
        tmp = self.outdir / f"{name}.partial"
        self._staged.append((tmp, self.outdir / name))
        return tmp

    def commit(self):
        for tmp, final in self._staged:
            tmp.replace(final)


def _require(outdir, name):
    path = Path(outdir) / name
    if not path.exists():
        raise MissingArtifactError(path)
    return path


def _load_outdir_dataset(outdir, name=DATASET):
    return corpus.load_dataset(
        _require(outdir, name),
        predicate_vocab_path=_require(outdir, PREDICATES),
        entity_vocab_path=_require(outdir, ENTITIES),
    )


def stage_ingest(cfg, outdir, out):
    dataset = corpus.load_dataset(
        cfg.paths.dataset,
        predicate_vocab_path=cfg.paths.predicate_vocab,
        entity_vocab_path=cfg.paths.entity_vocab,
    )
    predictions = corpus.load_predictions(cfg.paths.predictions, len(dataset.vocab))
    confusion = corpus.load_confusion(cfg.paths.confusion, dataset.vocab)
    corpus.save_dataset(
        dataset, out.path(DATASET),
        predicate_vocab_path=out.path(PREDICATES),
        entity_vocab_path=out.path(ENTITIES),
    )
    ordered = [predictions[k] for k in sorted(predictions)]
    corpus.save_predictions(ordered, out.path(PREDICTIONS))
    corpus.save_confusion(confusion, dataset.vocab, out.path(CONFUSION))


def stage_identify(cfg, outdir, out):
    dataset = _load_outdir_dataset(outdir)
    predictions = corpus.load_predictions(_require(outdir, PREDICTIONS), len(dataset.vocab))
    flagged = corpus.identify_indistinguishable(dataset, predictions)
    candidates = corpus.identify_potential_positives(dataset, predictions)
    with open(out.path(FLAGGED), "w") as fh:
        json.dump(sorted(flagged), fh)
        fh.write("\n")
    with open(out.path(NA_CANDIDATES), "w") as fh:
        for rid, target, na_score in candidates:
            fh.write(
                json.dumps(
                    {
                        "relation_id": rid,
                        "predicted": dataset.vocab.label(target),
                        "na_score": na_score,
                    }
                )
                + "\n"
            )


def _leading_comments(path):
    comments = []
    with open(path) as fh:
        for line in fh:
            stripped = line.strip()
            if stripped.startswith("#"):
                comments.append(stripped.lstrip("# "))
            elif stripped:
                break
    return comments


def stage_embed(cfg, outdir, out):
    dataset = _load_outdir_dataset(outdir)
    if cfg.paths.embeddings:
        table = embedding.load_embeddings(cfg.paths.embeddings)
        for rel in dataset.relations:
            table.get(rel.relation_id)  # raises CoverageError when missing
        comments = _leading_comments(cfg.paths.embeddings)
    else:
        enc = embedding.HashingSentenceEncoder(cfg.embedding.dim, cfg.embedding.featurizer_seed)
        rows = {}
        for rel in dataset.relations:
            rows[rel.relation_id] = embedding.featurize(
                corpus.triplet_to_sentence(rel, dataset.vocab),
                cfg.embedding.dim,
                cfg.embedding.featurizer_seed,
            )
        for rel in dataset.na_pairs:
            rows[rel.relation_id] = embedding.featurize(
                corpus.na_pair_to_sentence(rel), cfg.embedding.dim, cfg.embedding.featurizer_seed
            )
        table = embedding.EmbeddingTable(dim=enc.dim, rows=rows)
        comments = ["source=builtin-featurizer hashing=signed-ngram pooling=none"]
    embedding.save_embeddings(table, out.path(EMBEDDINGS), comments=comments)


def stage_train(cfg, outdir, out):
    dataset = _load_outdir_dataset(outdir)
    table = embedding.load_embeddings(_require(outdir, EMBEDDINGS))
    confusion = corpus.load_confusion(_require(outdir, CONFUSION), dataset.vocab)
    ids = [rel.relation_id for rel in dataset.relations]
    labels = np.asarray([rel.predicate for rel in dataset.relations])
    x = table.matrix(ids)

    encoder = ContrastiveEncoder(
        projected_dim=cfg.train.projected_dim,
        temperature=cfg.train.temperature,
        margin_degrees=cfg.train.margin_degrees,
        lam=cfg.train.lam,
        learning_rate=cfg.train.learning_rate,
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        momentum=cfg.train.momentum,
        seed=cfg.seed,
    )
    proj_dim = cfg.train.projected_dim or table.dim
    init_encoded, _ = encode_matrix(initial_weight(proj_dim, table.dim, cfg.seed), x)
    space = PrototypeSpace.from_embeddings(init_encoded, labels, len(dataset.vocab))
    tracker = PrototypeTracker(
        space,
        sample_ids=ids,
        labels_by_id={rid: int(lab) for rid, lab in zip(ids, labels)},
        mu=cfg.prototype.mu,
        beta=cfg.prototype.beta,
        gamma=cfg.prototype.gamma,
        drop_percent=cfg.prototype.drop_percent,
        min_class_size=cfg.prototype.min_class_size,
        update_cadence=cfg.prototype.update_cadence,
    )
    encoder.fit(x, labels, confusion=confusion, sample_ids=ids, observer=tracker)

    with open(out.path(ENCODER), "w") as fh:
        fh.write(f"projected_dim={encoder.projected_dim_},base_dim={encoder.n_features_in_}\n")
        for row in encoder.weight_:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(out.path(LOSS_TRACE), "w") as fh:
        fh.write("epoch,mean_lm,l_irm,active_sample_count\n")
        for row in encoder.loss_trace_:
            fh.write(
                f"{row['epoch']},{repr(row['mean_lm'])},{repr(row['l_irm'])},"
                f"{row['active_sample_count']}\n"
            )
    prototype.save_prototypes(space, dataset.vocab, out.path(PROTOTYPES))
    prototype.save_filtration_log(tracker.state, out.path(FILTRATION))


def stage_prototypes(cfg, outdir, out):
    dataset = _load_outdir_dataset(outdir)
    space = prototype.load_prototypes(_require(outdir, PROTOTYPES), dataset.vocab)
    sim = prototype.similarity_matrix(space)
    with open(out.path(SIMILARITY), "w") as fh:
        fh.write(",".join(dataset.vocab.labels) + "\n")
        for row in sim:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _load_similarity(path, vocab):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != tuple(vocab.labels):
        raise DatasetFormatError("similarity header does not match vocabulary", path=path)
    q = len(vocab)
    if len(lines) - 1 != q:
        raise DatasetFormatError(f"expected {q} similarity rows", path=path)
    return np.asarray([[float(v) for v in ln.split(",")] for ln in lines[1:]])


def stage_transfer(cfg, outdir, out):
    dataset = _load_outdir_dataset(outdir)
    predictions = corpus.load_predictions(_require(outdir, PREDICTIONS), len(dataset.vocab))
    with open(_require(outdir, FLAGGED)) as fh:
        flagged = set(json.load(fh))
    candidates = []
    with open(_require(outdir, NA_CANDIDATES)) as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                candidates.append(
                    (int(obj["relation_id"]), dataset.vocab.index(obj["predicted"]),
                     float(obj["na_score"]))
                )
    similarity = _load_similarity(_require(outdir, SIMILARITY), dataset.vocab)

    moves = []
    if cfg.transfer.indistinguishable:
        moves.extend(
            transfer.plan_indistinguishable(
                flagged, predictions, similarity, dataset,
                direction_constraint=cfg.transfer.direction_constraint,
            )
        )
    scarcity = transfer.compute_scarcity(dataset)
    moves.extend(transfer.plan_na_promotions(candidates, scarcity, dataset, cfg.transfer.kg))
    plan = transfer.TransferPlan(moves).validate()

    transfer.save_plan(plan, dataset.vocab, out.path(PLAN))  # audit first, then apply
    enhanced = transfer.apply_plan(dataset, plan)
    corpus.save_dataset(enhanced, out.path(ENHANCED))


def stage_resample(cfg, outdir, out):
    vocab_path = _require(outdir, PREDICATES)
    entities_path = _require(outdir, ENTITIES)
    enhanced = corpus.load_dataset(
        _require(outdir, ENHANCED), predicate_vocab_path=vocab_path,
        entity_vocab_path=entities_path,
    )
    if cfg.resample.scarcity_source == "original":
        source = _load_outdir_dataset(outdir)
    else:
        source = enhanced
    scarcity = transfer.compute_scarcity(source)
    plan = resample.compute_repeat_plan(enhanced, scarcity, cfg.resample.t)
    index = resample.materialize(plan.per_image, cfg.seed)
    resample.save_index(index, out.path(INDEX))


def stage_audit(cfg, outdir, out):
    original = _load_outdir_dataset(outdir)
    enhanced = corpus.load_dataset(
        _require(outdir, ENHANCED),
        predicate_vocab_path=_require(outdir, PREDICATES),
        entity_vocab_path=_require(outdir, ENTITIES),
    )
    plan = transfer.load_plan(_require(outdir, PLAN), original.vocab)
    report = audit_mod.transfer_report(original, enhanced, plan)
    audit_mod.save_report_csv(report, out.path(REPORT))
    metrics = {
        "recall": cfg.audit.recall,
        "mean_recall": cfg.audit.mean_recall,
        "pq": cfg.audit.pq,
    }
    summary = audit_mod.summary_dict(original, enhanced, plan, report, metrics)
    audit_mod.save_summary(summary, out.path(SUMMARY))


STAGES = {
    "ingest": stage_ingest,
    "identify": stage_identify,
    "embed": stage_embed,
    "train": stage_train,
    "prototypes": stage_prototypes,
    "transfer": stage_transfer,
    "resample": stage_resample,
    "audit": stage_audit,
}


def run_stage(name, cfg, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    out = _StageOutputs(outdir)
    log.info("running stage %s", name)
    try:
        STAGES[name](cfg, outdir, out)
    except Exception as exc:
        raise StageError(name, exc) from exc
    out.commit()


def run(cfg, outdir):
    """Run the whole pipeline; identical config and seed give identical bytes."""
    for name in STAGES:
        run_stage(name, cfg, outdir)
