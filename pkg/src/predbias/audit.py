"""Dataset statistics, metric compositions, and before/after transfer reports."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .transfer import MoveKind


def predicate_histogram(dataset):
    """Counts per predicate over annotated relations, plus a frequency-sorted view."""
    counts = np.zeros(len(dataset.vocab), dtype=int)
    for rel in dataset.relations:
        counts[rel.predicate] += 1
    order = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
    sorted_view = [(dataset.vocab.label(i), int(counts[i])) for i in order]
    return counts, sorted_view


def pr_score(recall, mean_recall, pq):
    """Composite 0.3 * R + 0.6 * mR + 0.1 * PQ."""
    return 0.3 * recall + 0.6 * mean_recall + 0.1 * pq


def f_score(recall, mean_recall):
    """Harmonic mean of R and mR; defined as 0 when both are 0."""
    if recall < 0 or mean_recall < 0:
        raise ValidationError("recall inputs must be nonnegative")
    if recall + mean_recall == 0:
        return 0.0
    # evaluation order keeps f(x, x) == x exact in floating point
    return (2.0 * mean_recall / (recall + mean_recall)) * recall


def _match_topk(gt_triplets, ranked_predictions, k):
    """Greedy one-to-one matching of top-k predictions against GT triplets."""
    remaining = {}
    for trip in gt_triplets:
        remaining[trip] = remaining.get(trip, 0) + 1
    matched = []
    for trip in ranked_predictions[:k]:
        if remaining.get(trip, 0) > 0:
            remaining[trip] -= 1
            matched.append(trip)
    return matched


def recall_at_k(gt_by_image, predictions_by_image, k):
    """Mean over images of |matched in top-k| / |GT|.

    Triplets are exact tuples (subject class, predicate, object class,
    subject segment, object segment); each GT triplet can be matched once.
    Images without GT triplets are excluded.
    """
    if k <= 0:
        raise ValidationError("K must be positive")
    recalls = []
    for image_id, gt in gt_by_image.items():
        if not gt:
            continue
        preds = predictions_by_image.get(image_id, [])
        matched = _match_topk(gt, preds, k)
        recalls.append(len(matched) / len(gt))
    return float(np.mean(recalls)) if recalls else 0.0


def mean_recall_at_k(gt_by_image, predictions_by_image, k):
    """Mean over predicates of per-predicate recall; predicates absent from GT are skipped."""
    if k <= 0:
        raise ValidationError("K must be positive")
    gt_total = {}
    hit_total = {}
    for image_id, gt in gt_by_image.items():
        if not gt:
            continue
        for trip in gt:
            gt_total[trip[1]] = gt_total.get(trip[1], 0) + 1
        preds = predictions_by_image.get(image_id, [])
        for trip in _match_topk(gt, preds, k):
            hit_total[trip[1]] = hit_total.get(trip[1], 0) + 1
    if not gt_total:
        return 0.0
    per_pred = [hit_total.get(p, 0) / total for p, total in gt_total.items()]
    return float(np.mean(per_pred))


@dataclass
class TransferReport:
    labels: tuple
    before: np.ndarray
    after: np.ndarray
    moves_in: np.ndarray
    moves_out: np.ndarray
    kind_counts: dict
    top_pairs: list      # [(from_label, to_label, count)] by count desc


def transfer_report(original, enhanced, plan):
    """Per-predicate before/after counts plus move statistics for one plan."""
    before, _ = predicate_histogram(original)
    after, _ = predicate_histogram(enhanced)
    q = len(original.vocab)
    moves_in = np.zeros(q, dtype=int)
    moves_out = np.zeros(q, dtype=int)
    kind_counts = {kind.value: 0 for kind in MoveKind}
    pair_counts = {}
    for mv in plan.moves:
        kind_counts[mv.kind.value] += 1
        moves_in[mv.to_predicate] += 1
        if mv.from_predicate is not None:
            moves_out[mv.from_predicate] += 1
        key = (
            "NA" if mv.from_predicate is None else original.vocab.label(mv.from_predicate),
            original.vocab.label(mv.to_predicate),
        )
        pair_counts[key] = pair_counts.get(key, 0) + 1
    top_pairs = sorted(
        ((src, dst, cnt) for (src, dst), cnt in pair_counts.items()),
        key=lambda t: (-t[2], t[0], t[1]),
    )
    return TransferReport(
        labels=original.vocab.labels,
        before=before,
        after=after,
        moves_in=moves_in,
        moves_out=moves_out,
        kind_counts=kind_counts,
        top_pairs=top_pairs,
    )


def save_report_csv(report, path):
    with open(path, "w") as fh:
        fh.write("predicate,before,after,moves_in,moves_out\n")
        for i, label in enumerate(report.labels):
            fh.write(
                f"{label},{report.before[i]},{report.after[i]},"
                f"{report.moves_in[i]},{report.moves_out[i]}\n"
            )


def summary_dict(original, enhanced, plan, report, metrics=None):
    """Scalar metrics for summary.json; optional externally supplied R/mR/PQ."""
    out = {
        "relations_before": len(original.relations),
        "relations_after": len(enhanced.relations),
        "na_pairs_before": len(original.na_pairs),
        "na_pairs_after": len(enhanced.na_pairs),
        "moves_total": len(plan.moves),
        "moves_by_kind": dict(sorted(report.kind_counts.items())),
        "top_pairs": [
            {"from": src, "to": dst, "count": cnt} for src, dst, cnt in report.top_pairs[:10]
        ],
    }
    if metrics:
        recall = metrics.get("recall")
        mean_recall = metrics.get("mean_recall")
        pq = metrics.get("pq")
        if recall is not None and mean_recall is not None:
            out["f_score"] = f_score(recall, mean_recall)
            if pq is not None:
                out["pr_score"] = pr_score(recall, mean_recall, pq)
    return out


def save_summary(summary, path):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
