import numpy as np
import pytest

from memtrack.core import (
    BinaryMask,
    CandidatePrediction,
    FeatureMap,
    FrameMeta,
    PredictionRecord,
)
from memtrack.reid import (
    FeatureBank,
    FeatureDescriptor,
    RecoveryWindow,
    Verdict,
    WindowFrame,
    bank_admit,
    cosine,
    cross_similarity,
    decide,
    extract_descriptor,
    max_overlap_with_others,
    self_similarity,
    vote,
)

DELTAS = dict(delta_sim=0.01, delta_sim_neg=-0.01, delta_iou=0.8)


def desc(*vectors, frame=0):
    return FeatureDescriptor(tuple(np.asarray(v, dtype=float) for v in vectors), frame)


def rect_mask(h, w, y0, y1, x0, x1):
    arr = np.zeros((h, w), dtype=bool)
    arr[y0:y1, x0:x1] = True
    return BinaryMask.from_array(arr)


def make_record(masks, scores, features=None):
    frame = FrameMeta(0, 8, 8)
    cands = tuple(CandidatePrediction(m, q, s) for m, (q, s) in zip(masks, scores))
    if features is None:
        features = (FeatureMap(0, np.ones((2, 2, 2), dtype=np.float32)),)
    return PredictionRecord(1, frame, cands, features)


class TestBankAdmit:
    def test_identical_candidates_high_r(self):
        mask = rect_mask(8, 8, 1, 5, 1, 5)
        rec = make_record([mask] * 3, [(0.99, 0.98)] * 3)
        assert bank_admit(rec, tau_rel=0.95, delta_agree=0.8) is True

    def test_low_reliability_rejected(self):
        mask = rect_mask(8, 8, 1, 5, 1, 5)
        rec = make_record([mask] * 3, [(0.5, 1.0), (0.4, 1.0), (0.4, 1.0)])
        assert bank_admit(rec, tau_rel=0.95, delta_agree=0.8) is False

    def test_min_pairwise_agreement(self):
        # boxes: a=(0..9 equivalent in 8x8 clipped) -> use computed IoUs below
        a = rect_mask(8, 8, 0, 4, 0, 8)   # rows 0-3
        b = rect_mask(8, 8, 1, 5, 0, 8)   # rows 1-4, IoU vs a = 3/5 = 0.6
        c = rect_mask(8, 8, 0, 4, 0, 8)
        rec = make_record([a, b, c], [(0.99, 0.99)] * 3)
        assert bank_admit(rec, tau_rel=0.95, delta_agree=0.8) is False
        assert bank_admit(rec, tau_rel=0.95, delta_agree=0.5) is True

    def test_absent_box_fails_agreement(self):
        full = rect_mask(8, 8, 0, 8, 0, 8)
        empty = BinaryMask.empty(8, 8)
        rec = make_record([full, full, empty], [(0.99, 0.99)] * 3)
        assert bank_admit(rec, tau_rel=0.5, delta_agree=0.1) is False


class TestSimilarity:
    def test_bank_of_self_two_scales(self):
        d = desc([1.0, 0.0], [0.0, 2.0])
        bank = FeatureBank(1)
        bank.add(d)
        assert self_similarity(d, bank) == pytest.approx(2.0)

    def test_orthogonal_entry(self):
        cur = desc([1.0, 0.0], [0.0, 1.0])
        ref = desc([0.0, 1.0], [1.0, 0.0])
        bank = FeatureBank(1)
        bank.add(ref)
        assert self_similarity(cur, bank) == pytest.approx(0.0)

    def test_mean_over_entries_single_scale(self):
        cur = desc([1.0, 0.0])
        bank = FeatureBank(1)
        bank.add(desc([2.0, 0.0]))                    # cos = 1.0
        bank.add(desc([1.0, np.sqrt(3.0)]))           # cos = 0.5
        assert self_similarity(cur, bank) == pytest.approx(0.75)

    def test_empty_bank_absent(self):
        assert self_similarity(desc([1.0]), FeatureBank(1)) is None

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        cur = desc(rng.normal(size=4), rng.normal(size=4))
        scaled = desc(*(7.5 * v for v in cur.vectors))
        bank = FeatureBank(1)
        for _ in range(3):
            bank.add(desc(rng.normal(size=4), rng.normal(size=4)))
        assert self_similarity(cur, bank) == pytest.approx(self_similarity(scaled, bank))

    def test_cross_similarity_max_and_argmax(self):
        cur = desc([1.0, 0.0])
        banks = {
            1: FeatureBank(1),
            2: FeatureBank(2),
            3: FeatureBank(3),
        }
        banks[2].add(desc([1.0, np.sqrt(3.0)]))  # cos 0.5
        banks[3].add(desc([1.0, 0.0]))           # cos 1.0
        score, cls = cross_similarity(cur, banks, exclude=1)
        assert score == pytest.approx(1.0)
        assert cls == 3

    def test_cross_similarity_tie_lowest_class(self):
        cur = desc([1.0, 0.0])
        banks = {1: FeatureBank(1), 2: FeatureBank(2), 3: FeatureBank(3)}
        banks[2].add(desc([2.0, 0.0]))
        banks[3].add(desc([3.0, 0.0]))
        score, cls = cross_similarity(cur, banks, exclude=1)
        assert score == pytest.approx(1.0)
        assert cls == 2

    def test_cross_similarity_all_empty(self):
        assert cross_similarity(desc([1.0]), {1: FeatureBank(1), 2: FeatureBank(2)}, 1) is None

    def test_zero_norm_rejected_at_construction(self):
        with pytest.raises(ValueError):
            desc([0.0, 0.0])

    def test_cosine_zero_vector_is_zero(self):
        assert cosine(np.zeros(3), np.ones(3)) == 0.0


class TestBankCap:
    def test_fifo_eviction(self):
        bank = FeatureBank(1, capacity=3)
        for i in range(7):
            bank.add(desc([1.0, float(i)], frame=i))
        assert len(bank) == 3
        assert [e.frame_index for e in bank.entries] == [4, 5, 6]


class TestExtractDescriptor:
    def test_full_frame_mask_global_means(self):
        fm0 = FeatureMap(0, np.arange(8, dtype=np.float32).reshape(2, 2, 2))
        full = rect_mask(8, 8, 0, 8, 0, 8)
        rec = make_record([full] * 3, [(0.9, 0.9)] * 3, features=(fm0,))
        d = extract_descriptor(rec)
        np.testing.assert_allclose(d.vectors[0], [1.5, 5.5])

    def test_empty_mask_absent(self):
        empty = BinaryMask.empty(8, 8)
        rec = make_record([empty] * 3, [(0.9, 0.9)] * 3)
        assert extract_descriptor(rec) is None

    def test_checkerboard_known_values(self):
        # grid cells (row-major) hold values 1,2,3,4; mask covers the two
        # diagonal cells holding 1 and 4 -> mean 2.5
        fm = FeatureMap(0, np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32))
        arr = np.zeros((8, 8), dtype=bool)
        arr[0:4, 0:4] = True
        arr[4:8, 4:8] = True
        rec = make_record([BinaryMask.from_array(arr)] * 3, [(0.9, 0.9)] * 3, features=(fm,))
        np.testing.assert_allclose(extract_descriptor(rec).vectors[0], [2.5])


class TestDecide:
    def test_paper_thresholds_accept(self):
        assert decide(0.80, 0.60, 0.1, **DELTAS) is Verdict.ACCEPT

    def test_reassign_on_reverse_margin(self):
        assert decide(0.40, 0.70, 0.1, **DELTAS) is Verdict.REASSIGN

    def test_overlap_blocks_accept_then_reject(self):
        assert decide(0.80, 0.60, 0.95, **DELTAS) is Verdict.REJECT

    def test_gap_region_goes_to_reassign_branch(self):
        # self barely ahead: accept margin fails, reassign inequality holds
        assert decide(0.505, 0.50, 0.0, **DELTAS) is Verdict.REASSIGN


class TestVote:
    def window(self, rows, class_id=1, capacity=None):
        win = RecoveryWindow(class_id, capacity or len(rows))
        for i, (s_self, s_other, other_cls, ov) in enumerate(rows):
            win.add(WindowFrame(i, s_self, s_other, other_cls, ov))
        return win

    def test_accept(self):
        win = self.window([(0.8, 0.6, 2, 0.1)] * 5)
        assert vote(win, **DELTAS).verdict is Verdict.ACCEPT

    def test_reassign_modal_class(self):
        rows = [
            (0.4, 0.7, 2, 0.0),
            (0.4, 0.7, 3, 0.0),
            (0.4, 0.7, 2, 0.0),
            (0.4, 0.7, 3, 0.0),
            (0.4, 0.7, 2, 0.0),
        ]
        d = vote(self.window(rows), **DELTAS)
        assert d.verdict is Verdict.REASSIGN and d.target_class == 2

    def test_reassign_tie_breaks_to_most_recent(self):
        rows = [
            (0.4, 0.7, 2, 0.0),
            (0.4, 0.7, 3, 0.0),
            (0.4, 0.7, 2, 0.0),
            (0.4, 0.7, 3, 0.0),
        ]
        d = vote(self.window(rows), **DELTAS)
        assert d.target_class == 3

    def test_reject_high_overlap_strong_self(self):
        win = self.window([(0.8, 0.6, 2, 0.95)] * 5)
        assert vote(win, **DELTAS).verdict is Verdict.REJECT

    def test_absent_frames_skipped_in_means(self):
        rows = [
            (0.9, 0.1, 2, 0.0),
            (None, None, None, 0.0),
            (0.7, 0.3, 2, 0.0),
        ]
        d = vote(self.window(rows), **DELTAS)
        assert d.verdict is Verdict.ACCEPT  # means over present frames: 0.8 vs 0.2

    def test_all_absent_accepts_by_default(self):
        rows = [(None, None, None, 0.0)] * 3
        assert vote(self.window(rows), **DELTAS).verdict is Verdict.ACCEPT

    def test_missing_other_side_counts_as_zero(self):
        rows = [(0.5, None, None, 0.0)] * 3
        assert vote(self.window(rows), **DELTAS).verdict is Verdict.ACCEPT
        rows = [(-0.5, None, None, 0.0)] * 3
        # 0 - (-0.5) = 0.5 >= -0.01 but there is no class to take; falls to reject
        assert vote(self.window(rows), **DELTAS).verdict is Verdict.REJECT

    def test_decision_totality_on_grid(self):
        # every (s_self, s_other, overlap) cell maps to exactly one verdict
        vals = np.linspace(0, 1, 21)
        for s in vals:
            for o in vals:
                for ov in vals[::4]:
                    v = decide(float(s), float(o), float(ov), **DELTAS)
                    assert v in (Verdict.ACCEPT, Verdict.REASSIGN, Verdict.REJECT)

    def test_vote_matches_bruteforce_oracle_on_grid(self):
        # the full vote path (means + modal class) against a straight-line
        # oracle, over a 10x10x10 mean grid realized as single-frame windows
        def oracle(s_self, s_other, overlap):
            if s_self - s_other >= 0.01 and overlap <= 0.8:
                return Verdict.ACCEPT
            if s_other - s_self >= -0.01:
                return Verdict.REASSIGN
            return Verdict.REJECT

        vals = [round(v, 3) for v in np.linspace(0, 1, 10)]
        for s in vals:
            for o in vals:
                for ov in vals:
                    win = self.window([(s, o, 2, ov)])
                    got = vote(win, **DELTAS)
                    assert got.verdict is oracle(s, o, ov)
                    if got.verdict is Verdict.REASSIGN:
                        assert got.target_class == 2

    def test_accept_reassign_mutually_exclusive(self):
        # under delta_sim > 0 > delta_sim_neg both inequalities can hold only
        # when overlap blocks accept; direct accept always wins otherwise
        win = self.window([(0.9, 0.895, 2, 0.0)] * 5)
        d = vote(win, **DELTAS)
        assert d.verdict in (Verdict.ACCEPT, Verdict.REASSIGN)


class TestOverlap:
    def test_max_against_others(self):
        a = rect_mask(8, 8, 0, 4, 0, 4)
        b = rect_mask(8, 8, 0, 4, 0, 2)   # IoU vs a = 8/16 = 0.5
        c = rect_mask(8, 8, 4, 8, 4, 8)   # disjoint
        assert max_overlap_with_others(a, [b, c]) == pytest.approx(0.5)

    def test_empty_sides_do_not_count(self):
        a = BinaryMask.empty(8, 8)
        b = rect_mask(8, 8, 0, 4, 0, 4)
        assert max_overlap_with_others(a, [b]) == 0.0
        assert max_overlap_with_others(b, [BinaryMask.empty(8, 8)]) == 0.0
