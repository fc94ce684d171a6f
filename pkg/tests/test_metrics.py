from __future__ import annotations

import math

import numpy as np
import pytest

from polytask.metrics import (align_tokens, itt_count, lid_accuracy, ner_f1,
                              token_f1, wer)
from polytask.tasks import TaskId, TaskSet


class TestWer:
    def test_identity_is_zero(self):
        assert wer(["a", "b", "c"], ["a", "b", "c"]).wer == 0.0

    def test_hand_worked_mixed_errors(self):
        # a b c -> a x c d: substitute b, insert d
        r = wer(["a", "b", "c"], ["a", "x", "c", "d"])
        assert (r.substitutions, r.insertions, r.deletions) == (1, 1, 0)
        assert r.wer == pytest.approx(2 / 3)

    def test_all_deletions(self):
        r = wer(["a"], [])
        assert r.deletions == 1
        assert r.wer == 1.0

    def test_empty_ref_empty_hyp(self):
        assert wer([], []).wer == 0.0

    def test_empty_ref_nonempty_hyp_is_inf(self):
        assert math.isinf(wer([], ["a"]).wer)

    def test_identity_property_random(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            x = rng.integers(0, 5, size=rng.integers(0, 12)).tolist()
            assert wer(x, x).wer == 0.0

    def test_sub_del_swap_under_argument_swap(self):
        a, b = ["a", "b", "c"], ["a", "c"]
        fwd, rev = wer(a, b), wer(b, a)
        assert fwd.deletions == rev.insertions
        assert fwd.insertions == rev.deletions
        assert fwd.substitutions == rev.substitutions


def brute_force_edit_distance(ref, hyp):
    """Exponential recursion, independent of the DP implementation."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(
        brute_force_edit_distance(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
        brute_force_edit_distance(ref[1:], hyp) + 1,
        brute_force_edit_distance(ref, hyp[1:]) + 1,
    )


class TestAlignTokens:
    def test_identical_sequences_all_match(self):
        ops = align_tokens("abc", "abc")
        assert [o.op for o in ops] == ["match"] * 3

    def test_single_insertion(self):
        ops = align_tokens("ab", "axb")
        assert sorted(o.op for o in ops) == ["ins", "match", "match"]

    def test_cost_matches_independent_recursion(self):
        rng = np.random.default_rng(1)
        for _ in range(40):
            ref = rng.integers(0, 4, size=rng.integers(0, 7)).tolist()
            hyp = rng.integers(0, 4, size=rng.integers(0, 7)).tolist()
            cost = sum(1 for o in align_tokens(ref, hyp) if o.op != "match")
            assert cost == brute_force_edit_distance(ref, hyp)

    def test_alignment_is_consistent(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            ref = rng.integers(0, 4, size=rng.integers(0, 8)).tolist()
            hyp = rng.integers(0, 4, size=rng.integers(0, 8)).tolist()
            ops = align_tokens(ref, hyp)
            assert sum(1 for o in ops if o.ref_pos is not None) == len(ref)
            assert sum(1 for o in ops if o.hyp_pos is not None) == len(hyp)
            for o in ops:
                if o.op == "match":
                    assert ref[o.ref_pos] == hyp[o.hyp_pos]


class TestTokenF1:
    S, W1, W2 = "S", "a", "b"  # S plays the task token

    def test_perfect_alignment_gives_one(self):
        ref = [self.W1, self.S, self.W2, self.S]
        assert token_f1(ref, list(ref), {self.S}).f1 == 1.0

    def test_half_aligned_half_spurious(self):
        # ref has 2 task tokens; hyp aligns one and places one elsewhere
        ref = [self.W1, self.S, self.W2, self.W1, self.S]
        hyp = [self.S, self.W1, self.W2, self.W1, self.S]
        p, r, f1 = token_f1(ref, hyp, {self.S})
        assert (p, r, f1) == (0.5, 0.5, 0.5)

    def test_no_task_tokens_in_hyp(self):
        ref = [self.W1, self.S]
        assert token_f1(ref, [self.W1], {self.S}).f1 == 0.0

    def test_word_edits_away_from_tokens_do_not_change_f1(self):
        ref = [self.W1, self.W2, self.S, self.W1, self.W2]
        hyp = [self.W2, self.W2, self.S, self.W1, self.W1]  # two substitutions, token aligned
        assert token_f1(ref, hyp, {self.S}).f1 == 1.0


class TestNerF1:
    def test_exact_match(self):
        ref = [("PER", ("john", "smith"))]
        assert ner_f1(ref, [("PER", ("john", "smith"))]).f1 == 1.0

    def test_partial_surface_fails(self):
        ref = [("PER", ("john", "smith"))]
        assert ner_f1(ref, [("PER", ("john",))]).f1 == 0.0

    def test_type_confusion_multiset(self):
        ref = [("PER", ("a",)), ("LOC", ("b",))]
        hyp = [("PER", ("a",)), ("PER", ("b",))]
        p, r, f1 = ner_f1(ref, hyp)
        assert (p, r) == (0.5, 0.5)

    def test_one_iff_multisets_equal(self):
        rng = np.random.default_rng(3)
        surfaces = [("PER", ("x",)), ("PER", ("y",)), ("LOC", ("x", "y"))]
        for _ in range(50):
            ref = [surfaces[i] for i in rng.integers(0, 3, size=rng.integers(1, 5))]
            hyp = [surfaces[i] for i in rng.integers(0, 3, size=rng.integers(1, 5))]
            got = ner_f1(ref, hyp)
            if sorted(ref) == sorted(hyp):
                assert got.f1 == 1.0
            else:
                assert got.f1 < 1.0


class TestLidAccuracy:
    def test_all_correct(self):
        assert lid_accuracy(["en", "de"], ["en", "de"]) == 1.0

    def test_missing_prediction_counts_wrong(self):
        assert lid_accuracy(["en", "de"], ["en", None]) == 0.5

    def test_half_of_ten(self):
        refs = ["en"] * 10
        hyps = ["en"] * 5 + ["de"] * 5
        assert lid_accuracy(refs, hyps) == 0.5


class TestIttCount(object):
    def test_all_active_is_zero(self, small_vocab):
        seqs = [small_vocab.to_ids(["<scd>", "en_w0", "<ep>", "<lid:en>"])]
        assert itt_count(seqs, TaskSet.all_tasks(), small_vocab) == 0

    def test_asr_only_counts_every_task_token(self, small_vocab):
        seqs = [small_vocab.to_ids(["en_w0", "<scd>"])]
        assert itt_count(seqs, TaskSet.asr_only(), small_vocab) == 1

    def test_ner_pair_counts_two(self, small_vocab):
        seqs = [small_vocab.to_ids(["<ne:PER>", "en_w0", "</ne>"])]
        assert itt_count(seqs, TaskSet.of(TaskId.SCD), small_vocab) == 2
