import math

import numpy as np
import pytest

from predbias.corpus import PredictionRecord, Provenance
from predbias.errors import PlanError, ValidationError
from predbias.transfer import (
    Move,
    MoveKind,
    TransferPlan,
    apply_plan,
    compute_scarcity,
    influence_factor,
    load_plan,
    plan_indistinguishable,
    plan_na_promotions,
    save_plan,
    softmax,
)

from conftest import make_dataset


class TestScarcity:
    def test_inverse_count(self):
        ds = make_dataset(num_images=6, relations_per_image=2, na_per_image=0, q=3)
        scarcity = compute_scarcity(ds)
        counts = np.zeros(3)
        for rel in ds.relations:
            counts[rel.predicate] += 1
        assert counts[1] == 4
        assert scarcity.predicate_scarcity(1) == pytest.approx(0.25)

    def test_equal_frequencies_equal_scarcity(self):
        ds = make_dataset(num_images=3, relations_per_image=3, na_per_image=0, q=3)
        scarcity = compute_scarcity(ds)
        values = {scarcity.predicate_scarcity(p) for p in range(3)}
        assert len(values) == 1

    def test_unseen_pair_floored(self):
        ds = make_dataset()
        scarcity = compute_scarcity(ds)
        assert scarcity.pair_scarcity("never", "seen") == pytest.approx(2.0)


class TestInfluenceFactor:
    def test_na_one_gives_zero(self):
        assert influence_factor(1.0, 0.5, 0.5) == 0.0

    def test_hand_value(self):
        e = influence_factor(math.exp(-1), 0.04, 0.25)
        assert e == pytest.approx(0.1, abs=1e-12)

    def test_strictly_increasing_as_na_drops(self):
        values = [influence_factor(na, 0.3, 0.3) for na in (0.9, 0.5, 0.2, 0.05)]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_validation(self):
        with pytest.raises(ValidationError):
            influence_factor(0.0, 0.5, 0.5)
        with pytest.raises(ValidationError):
            influence_factor(1.5, 0.5, 0.5)
        with pytest.raises(ValidationError):
            influence_factor(0.5, 0.0, 0.5)

    def test_softmax_normalizes(self):
        w = softmax([1.0, 2.0, 3.0])
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert w[2] > w[1] > w[0]


def flagged_fixture(q=3, group_size=5):
    """Dataset where `group_size` relations of predicate 0 are predicted as 1."""
    ds = make_dataset(num_images=10, relations_per_image=3, na_per_image=1, q=q)
    preds = {}
    flagged = []
    moved = 0
    for rel in ds.relations:
        scores = np.full(q, 0.05)
        if rel.predicate == 0 and moved < group_size:
            scores[1] = 0.5 + 0.04 * moved  # distinct confidences for ranking
            flagged.append(rel.relation_id)
            moved += 1
        else:
            scores[rel.predicate] = 0.9
        preds[rel.relation_id] = PredictionRecord(rel.relation_id, scores, 0.9)
    for rel in ds.na_pairs:
        scores = np.full(q, 0.05)
        scores[1] = 0.7
        preds[rel.relation_id] = PredictionRecord(rel.relation_id, scores, 0.2)
    return ds, preds, flagged


class TestPlanIndistinguishable:
    def similarity(self, value):
        sim = np.eye(3)
        sim[0, 1] = sim[1, 0] = value
        return sim

    def test_nonpositive_similarity_no_moves(self):
        ds, preds, flagged = flagged_fixture()
        moves = plan_indistinguishable(flagged, preds, self.similarity(-0.2), ds,
                                       direction_constraint=False)
        assert moves == []

    def test_full_similarity_moves_whole_group(self):
        ds, preds, flagged = flagged_fixture()
        moves = plan_indistinguishable(flagged, preds, self.similarity(1.0), ds,
                                       direction_constraint=False)
        assert {m.relation_id for m in moves} == set(flagged)

    def test_half_similarity_moves_ceiling(self):
        ds, preds, flagged = flagged_fixture(group_size=5)
        moves = plan_indistinguishable(flagged, preds, self.similarity(0.5), ds,
                                       direction_constraint=False)
        assert len(moves) == 3  # ceil(0.5 * 5)
        # the three most confident members move
        confidences = sorted((preds[f].scores[1] for f in flagged), reverse=True)
        moved_conf = sorted((m.score for m in moves), reverse=True)
        assert moved_conf == confidences[:3]

    def test_direction_constraint_blocks_tail_to_head(self):
        ds, preds, flagged = flagged_fixture()
        counts = np.zeros(3, dtype=int)
        for rel in ds.relations:
            counts[rel.predicate] += 1
        assert counts[0] == counts[1]  # equal counts: not strictly more frequent
        moves = plan_indistinguishable(flagged, preds, self.similarity(1.0), ds,
                                       direction_constraint=True)
        assert moves == []

    def test_direction_constraint_allows_head_to_tail(self):
        ds, preds, flagged = flagged_fixture()
        # make predicate 0 strictly more frequent than predicate 1
        extra = [r for r in ds.relations if r.predicate == 2][:3]
        for rel in extra:
            rel.predicate = 0
            preds[rel.relation_id].scores[0] = 0.9
        moves = plan_indistinguishable(flagged, preds, self.similarity(1.0), ds,
                                       direction_constraint=True)
        counts = np.zeros(3, dtype=int)
        for rel in ds.relations:
            counts[rel.predicate] += 1
        assert moves
        for mv in moves:
            assert counts[mv.from_predicate] > counts[mv.to_predicate]

    def test_moves_carry_kind_and_predicates(self):
        ds, preds, flagged = flagged_fixture()
        moves = plan_indistinguishable(flagged, preds, self.similarity(1.0), ds,
                                       direction_constraint=False)
        for mv in moves:
            assert mv.kind is MoveKind.INDISTINGUISHABLE
            assert (mv.from_predicate, mv.to_predicate) == (0, 1)


class TestPlanNaPromotions:
    def make_candidates(self, n, seed=0):
        ds = make_dataset(num_images=max(n, 3), relations_per_image=2, na_per_image=1, q=3)
        rng = np.random.default_rng(seed)
        candidates = [
            (rel.relation_id, int(rng.integers(0, 3)), float(rng.uniform(0.05, 0.9)))
            for rel in ds.na_pairs[:n]
        ]
        return ds, compute_scarcity(ds), candidates

    def test_zero_kg_no_promotions(self):
        ds, scarcity, candidates = self.make_candidates(10)
        assert plan_na_promotions(candidates, scarcity, ds, 0.0) == []

    def test_hundred_candidates_five_promotions(self):
        ds, scarcity, candidates = self.make_candidates(100)
        moves = plan_na_promotions(candidates, scarcity, ds, 0.05)
        assert len(moves) == 5
        for mv in moves:
            assert mv.kind is MoveKind.NA_PROMOTION and mv.from_predicate is None

    def test_zero_influence_never_outranks(self):
        ds, scarcity, candidates = self.make_candidates(10)
        candidates[0] = (candidates[0][0], candidates[0][1], 1.0)  # E = 0
        moves = plan_na_promotions(candidates, scarcity, ds, 0.1)
        assert candidates[0][0] not in {m.relation_id for m in moves}

    def test_order_invariance(self):
        ds, scarcity, candidates = self.make_candidates(20, seed=3)
        forward = plan_na_promotions(candidates, scarcity, ds, 0.25)
        backward = plan_na_promotions(list(reversed(candidates)), scarcity, ds, 0.25)
        assert [m.relation_id for m in forward] == [m.relation_id for m in backward]


class TestApplyPlan:
    def test_empty_plan_identity(self):
        ds = make_dataset()
        out = apply_plan(ds, TransferPlan([]))
        assert len(out.relations) == len(ds.relations)
        for a, b in zip(out.relations, ds.relations):
            assert (a.relation_id, a.predicate, a.provenance) == (
                b.relation_id, b.predicate, b.provenance)

    def test_relabel_shifts_histogram_by_one(self):
        from predbias.audit import predicate_histogram
        ds = make_dataset(num_images=4, relations_per_image=2, na_per_image=0)
        rel = next(r for r in ds.relations if r.predicate == 0)
        plan = TransferPlan([Move(rel.relation_id, 0, 1, 0.9, MoveKind.INDISTINGUISHABLE)])
        before, _ = predicate_histogram(ds)
        after, _ = predicate_histogram(apply_plan(ds, plan))
        delta = after - before
        assert delta[0] == -1 and delta[1] == 1 and delta[2] == 0

    def test_promotion_grows_relations(self):
        ds = make_dataset()
        na = ds.na_pairs[0]
        plan = TransferPlan([Move(na.relation_id, None, 2, 0.5, MoveKind.NA_PROMOTION)])
        out = apply_plan(ds, plan)
        assert len(out.relations) == len(ds.relations) + 1
        assert len(out.na_pairs) == len(ds.na_pairs) - 1
        promoted = next(r for r in out.relations if r.relation_id == na.relation_id)
        assert promoted.predicate == 2
        assert promoted.provenance is Provenance.NA_PROMOTED

    def test_double_application_fails(self):
        ds = make_dataset()
        rel = next(r for r in ds.relations if r.predicate == 0)
        plan = TransferPlan([Move(rel.relation_id, 0, 1, 0.9, MoveKind.INDISTINGUISHABLE)])
        once = apply_plan(ds, plan)
        with pytest.raises(PlanError, match="provenance"):
            apply_plan(once, plan)

    def test_unknown_id_fails(self):
        ds = make_dataset()
        plan = TransferPlan([Move(10_000, 0, 1, 0.9, MoveKind.INDISTINGUISHABLE)])
        with pytest.raises(PlanError, match="unknown"):
            apply_plan(ds, plan)

    def test_source_mismatch_fails(self):
        ds = make_dataset()
        rel = next(r for r in ds.relations if r.predicate == 0)
        plan = TransferPlan([Move(rel.relation_id, 2, 1, 0.9, MoveKind.INDISTINGUISHABLE)])
        with pytest.raises(PlanError, match="does not match"):
            apply_plan(ds, plan)

    def test_untouched_relations_preserved(self):
        ds = make_dataset(num_images=4, relations_per_image=2, na_per_image=1)
        rel = next(r for r in ds.relations if r.predicate == 0)
        plan = TransferPlan([Move(rel.relation_id, 0, 1, 0.9, MoveKind.INDISTINGUISHABLE)])
        out = apply_plan(ds, plan)
        for a, b in zip(out.relations, ds.relations):
            if a.relation_id != rel.relation_id:
                assert (a.predicate, a.provenance) == (b.predicate, b.provenance)


class TestPlanValidationAndIO:
    def test_duplicate_move_rejected(self):
        moves = [
            Move(1, 0, 1, 0.9, MoveKind.INDISTINGUISHABLE),
            Move(1, 0, 2, 0.8, MoveKind.INDISTINGUISHABLE),
        ]
        with pytest.raises(PlanError, match="twice"):
            TransferPlan(moves).validate()

    def test_noop_move_rejected(self):
        with pytest.raises(PlanError, match="no-op"):
            TransferPlan([Move(1, 2, 2, 0.9, MoveKind.INDISTINGUISHABLE)]).validate()

    def test_file_round_trip(self, tmp_path):
        ds = make_dataset()
        moves = [
            Move(0, 0, 1, 0.75, MoveKind.INDISTINGUISHABLE),
            Move(2, None, 2, 0.31, MoveKind.NA_PROMOTION),
        ]
        path = tmp_path / "plan.jsonl"
        save_plan(TransferPlan(moves), ds.vocab, path)
        loaded = load_plan(path, ds.vocab)
        assert loaded.moves == moves
