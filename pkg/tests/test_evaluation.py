from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from bcpredict.corpus import BcEvent, MonologueSegment
from bcpredict.evaluation import (
    REPORT_HEADER,
    EvaluationError,
    Margin,
    baseline_triggers,
    evaluate,
    in_segments,
    match_triggers,
    precision_recall_f1,
    random_baseline,
    report_tsv,
)
from bcpredict.rng import Stream

from conftest import brute_force_matching, conversation, utt

M01 = Margin(0.0, 1.0)
times = st.lists(st.integers(0, 60).map(lambda k: k / 10), max_size=10).map(sorted)


def scipy_matching(pred, truth, lo, hi):
    if not pred or not truth:
        return 0
    adj = np.array([[o + lo - 1e-9 <= p <= o + hi + 1e-9 for o in truth] for p in pred], dtype=float)
    if not adj.any():
        return 0
    match = maximum_bipartite_matching(csr_matrix(adj), perm_type="column")
    return int(np.sum(match >= 0))


class TestMatch:
    def test_identity(self):
        t = [1.0, 2.5, 7.0]
        assert match_triggers(t, t, Margin(-0.2, 0.2)) == 3
        assert match_triggers(t, t, M01) == 3

    def test_empty(self):
        assert match_triggers([], [1.0], M01) == 0
        assert match_triggers([1.0], [], M01) == 0

    def test_no_double_counting(self):
        assert match_triggers([10.2, 10.4], [10.0], M01) == 1
        assert match_triggers([10.2], [10.0, 10.1], M01) == 1

    def test_bounds_inclusive(self):
        assert match_triggers([11.0], [10.0], M01) == 1
        assert match_triggers([10.0], [10.0], M01) == 1
        assert match_triggers([9.99], [10.0], M01) == 0
        assert match_triggers([9.8], [10.0], Margin(-0.2, 0.2)) == 1

    def test_greedy_takes_earliest(self):
        # 1.5 could match either onset; taking 1.0 leaves 2.0 for 2.6
        assert match_triggers([1.5, 2.6], [1.0, 2.0], M01) == 2

    @given(times, times, st.sampled_from([(0.0, 1.0), (-0.2, 0.2), (-0.5, 0.5), (0.3, 0.3), (-1.0, 0.0)]))
    @settings(max_examples=300, deadline=None)
    def test_optimal(self, pred, truth, margin):
        got = match_triggers(pred, truth, Margin(*margin))
        assert got == brute_force_matching(pred, truth, *margin)
        assert got == scipy_matching(pred, truth, *margin)

    @given(times, times, st.floats(-1, 0), st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 0.5))
    @settings(max_examples=200, deadline=None)
    def test_wider_margin_never_fewer(self, pred, truth, lo, hi, dlo, dhi):
        assert match_triggers(pred, truth, Margin(lo - dlo, hi + dhi)) >= match_triggers(pred, truth, Margin(lo, hi))

    def test_invalid_margin(self):
        with pytest.raises(EvaluationError):
            Margin(0.5, 0.1)


class TestScores:
    def test_perfect(self):
        assert precision_recall_f1(5, 5, 5) == (1.0, 1.0, 1.0)

    def test_zero_counts(self):
        assert precision_recall_f1(0, 0, 0) == (0.0, 0.0, 0.0)
        assert precision_recall_f1(0, 3, 0) == (0.0, 0.0, 0.0)

    def test_known_row(self):
        # counts whose P, R and F1 round to 0.305 / 0.488 / 0.375
        p, r, f = precision_recall_f1(100, 328, 205)
        assert (round(p, 3), round(r, 3), round(f, 3)) == (0.305, 0.488, 0.375)

    def test_exact_rational(self):
        p, r, f = precision_recall_f1(2, 3, 4)
        assert Fraction(f).limit_denominator(1000) == Fraction(4, 7)

    def test_invalid(self):
        with pytest.raises(EvaluationError):
            precision_recall_f1(3, 2, 5)

    @given(st.integers(1, 200), st.integers(1, 200), st.integers(0, 200))
    def test_f1_bounds(self, n_pred, n_truth, m):
        m = min(m, n_pred, n_truth)
        p, r, f = precision_recall_f1(m, n_pred, n_truth)
        assert f <= min(2 * p, 2 * r) + 1e-12
        if p > 0 and r > 0:
            assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12


def two_conversations():
    convs = [conversation(duration=30.0, conv_id="c1"), conversation(duration=30.0, conv_id="c2")]
    truth = {"c1": [BcEvent("B", 5.0, "yeah"), BcEvent("B", 10.0, "yeah")], "c2": [BcEvent("A", 3.0, "right")]}
    trig = {("c1", "B"): [5.1, 20.0], ("c2", "A"): [3.5]}
    return convs, truth, trig


class TestEvaluate:
    def test_micro_average(self):
        convs, truth, trig = two_conversations()
        rep = evaluate(convs, trig, truth, frozenset(), M01, monologuing_only=False)
        assert (rep.n_matched, rep.n_predictions, rep.n_truth) == (2, 3, 3)
        assert rep.precision == pytest.approx(2 / 3) and rep.recall == pytest.approx(2 / 3)

    def test_single_conversation(self):
        convs, truth, trig = two_conversations()
        rep = evaluate(convs[:1], trig, truth, frozenset(), M01, monologuing_only=False)
        assert (rep.precision, rep.recall) == precision_recall_f1(match_triggers([5.1, 20.0], [5.0, 10.0], M01), 2, 2)[:2]

    def test_no_segments(self):
        convs, truth, trig = two_conversations()
        rep = evaluate(convs, trig, truth, frozenset(), M01, segments={"c1": [], "c2": []})
        assert (rep.n_truth, rep.n_predictions, rep.f1) == (0, 0, 0.0)

    def test_segments_filter_both_sides(self):
        convs, truth, trig = two_conversations()
        segs = {"c1": [MonologueSegment("A", 0.0, 8.0), MonologueSegment("B", 15.0, 25.0)], "c2": []}
        rep = evaluate(convs, trig, truth, frozenset(), M01, segments=segs)
        # only B listens in [0, 8]: truth 5.0 and trigger 5.1 survive; trigger 20.0 has B speaking
        assert (rep.n_matched, rep.n_predictions, rep.n_truth) == (1, 1, 1)

    def test_segments_from_transcript(self, lexicon):
        a = [utt("A", ("so", 0.0, 9.0))]
        b = [utt("B", ("yeah", 4.0, 4.3))]
        conv = conversation(a, b, 12.0, "m")
        truth = {"m": [BcEvent("B", 4.0, "yeah")]}
        rep = evaluate([conv], {("m", "B"): [4.2]}, truth, lexicon, M01)
        assert (rep.n_matched, rep.n_predictions, rep.n_truth) == (1, 1, 1)

    def test_report_tsv(self):
        convs, truth, trig = two_conversations()
        rep = evaluate(convs, trig, truth, frozenset(), M01, monologuing_only=False)
        lines = report_tsv([rep]).splitlines()
        assert lines[0] == REPORT_HEADER
        assert lines[1].split("\t") == ["0", "1", "0.666667", "0.666667", "0.666667", "3", "3", "2"]


class TestBaseline:
    def test_zero(self):
        assert random_baseline([(0, 10)], 0, 8, Stream(1)) == []
        assert random_baseline([], 5, 1, Stream(1)) == []

    def test_count_and_support(self):
        spans = [(1.0, 2.0), (5.0, 5.0), (10.0, 14.0)]
        t = random_baseline(spans, 25, 8, Stream(2))
        assert len(t) == 200 and t == sorted(t)
        assert in_segments(t, spans) == t
        frac = np.mean(np.array(t) < 5)
        assert 0.1 < frac < 0.3

    def test_deterministic(self):
        assert random_baseline([(0, 10)], 5, 1, Stream(3, "x")) == random_baseline([(0, 10)], 5, 1, Stream(3, "x"))

    def test_precision_equals_recall(self, generated, lexicon):
        convs = [g.conversation for g in generated]
        truth = {g.conversation.id: g.bc_events for g in generated}
        for seed in range(5):
            trig = baseline_triggers(convs, truth, lexicon, 1, seed)
            for conv in convs:
                rep = evaluate([conv], trig, truth, lexicon, M01)
                assert rep.n_predictions == rep.n_truth
                assert rep.precision == rep.recall

    def test_multiplier_scales(self, generated, lexicon):
        convs = [g.conversation for g in generated]
        truth = {g.conversation.id: g.bc_events for g in generated}
        one = baseline_triggers(convs, truth, lexicon, 1, 0, monologuing_only=False)
        eight = baseline_triggers(convs, truth, lexicon, 8, 0, monologuing_only=False)
        for key in one:
            assert len(eight[key]) == 8 * len(one[key])
