"""
Tests for OLS matching and AP/AR evaluation.

Usage:
    pytest test_evaluation.py

Random fixtures keep ground-truth objects several meters apart, so every
detection has at most one plausible partner and greedy matching can be
compared with an exhaustive optimal assignment.
"""
import itertools
import math

import numpy as np
import pytest

from evaluation import (
    OLS_THRESHOLDS,
    evaluate,
    interpolated_ap,
    localization_errors,
    match_detections,
    pooled_localization,
)
from geometry import ols
from models import KappaTable, ObjectRecord
from output_formatter import format_eval_table, format_key_values

KAPPA = KappaTable(0.1, 0.1, 0.1)


def gt(frame_id, class_id, r, az):
    return ObjectRecord(frame_id, class_id, r, az, 1.0, "human")


def det(frame_id, class_id, r, az, confidence):
    return ObjectRecord(frame_id, class_id, r, az, confidence, "rodnet")


def half_right_fixture():
    """10 ground truths; 5 exact high-confidence hits then 5 far-away low-confidence misses."""
    gts = [gt(i, 0, 10.0, 0.0) for i in range(10)]
    dets = [det(i, 0, 10.0, 0.0, 0.9 - 0.05 * i) for i in range(5)]
    dets += [det(i, 0, 20.0, 0.6, 0.4 - 0.05 * (i - 5)) for i in range(5, 10)]
    return dets, gts


def separated_fixture(seed, frames=3, per_frame=4, extra_fp=3):
    """Ground truth on a coarse lattice, detections jittered by varying amounts plus stray false positives."""
    rng = np.random.default_rng(seed)
    gts, dets = [], []
    for f in range(frames):
        slots = rng.choice(12, size=per_frame, replace=False)
        for s in slots:
            r = 6.0 + 6.0 * (s // 4)
            az = -0.6 + 0.4 * (s % 4)
            class_id = int(rng.integers(0, 3))
            gts.append(gt(f, class_id, r, az))
            if rng.random() < 0.8:
                jitter = rng.uniform(0.0, 0.6) * r * 0.1
                angle = rng.uniform(0, 2 * math.pi)
                x = r * math.sin(az) + jitter * math.cos(angle)
                z = r * math.cos(az) + jitter * math.sin(angle)
                dets.append(det(f, class_id, math.hypot(x, z), math.atan2(x, z), float(rng.uniform(0.05, 1.0))))
        for _ in range(extra_fp):
            dets.append(det(f, int(rng.integers(0, 3)), 3.0, 0.9, float(rng.uniform(0.05, 1.0))))
    return dets, gts


def optimal_true_positives(dets, gts, threshold, kappa):
    """Largest one-to-one matching by exhaustive search over assignments."""
    best = 0
    n = len(gts)
    for perm in itertools.permutations(list(range(n)) + [None] * len(dets), len(dets)):
        count = 0
        for i, j in enumerate(perm):
            if j is None:
                continue
            d, g = dets[i], gts[j]
            if d.frame_id == g.frame_id and d.class_id == g.class_id and ols(g, d, kappa) >= threshold:
                count += 1
        best = max(best, count)
    return best


class TestMatching:
    def test_identical_sets_match_fully(self):
        gts = [gt(0, 0, 5.0, 0.1), gt(0, 2, 12.0, -0.3), gt(1, 1, 8.0, 0.4)]
        dets = [det(g.frame_id, g.class_id, g.range, g.azimuth, 1.0) for g in gts]
        for threshold in OLS_THRESHOLDS:
            m = match_detections(dets, gts, threshold, KAPPA)
            assert (m.true_positives, len(m.false_positives), len(m.false_negatives)) == (3, 0, 0)

    def test_no_detections(self):
        gts = [gt(0, 0, 5.0, 0.1), gt(2, 1, 7.0, 0.0)]
        m = match_detections([], gts, 0.5, KAPPA)
        assert m.true_positives == 0
        assert m.false_negatives == [0, 1]

    def test_class_and_frame_aware(self):
        gts = [gt(0, 0, 5.0, 0.1)]
        dets = [det(0, 1, 5.0, 0.1, 0.9), det(1, 0, 5.0, 0.1, 0.8)]
        m = match_detections(dets, gts, 0.5, KAPPA)
        assert m.true_positives == 0
        assert sorted(m.false_positives) == [0, 1]

    def test_higher_confidence_claims_first(self):
        gts = [gt(0, 0, 10.0, 0.0)]
        near = det(0, 0, 10.05, 0.0, 0.4)
        off = det(0, 0, 10.4, 0.0, 0.9)
        m = match_detections([near, off], gts, 0.5, KAPPA)
        assert [(i, j) for i, j, _ in m.pairs] == [(1, 0)]
        assert m.false_positives == [0]

    def test_picks_best_remaining_ground_truth(self):
        gts = [gt(0, 0, 10.0, 0.0), gt(0, 0, 10.6, 0.0)]
        m = match_detections([det(0, 0, 10.5, 0.0, 0.9)], gts, 0.5, KAPPA)
        assert [(i, j) for i, j, _ in m.pairs] == [(0, 1)]

    @pytest.mark.parametrize("seed", range(6))
    def test_greedy_equals_optimal_assignment_on_small_fixtures(self, seed):
        rng = np.random.default_rng(100 + seed)
        gts = [gt(0, 0, 6.0 + 5.0 * k, float(rng.uniform(-0.3, 0.3))) for k in range(int(rng.integers(1, 6)))]
        dets = []
        for _ in range(int(rng.integers(1, 6))):
            g = gts[int(rng.integers(0, len(gts)))]
            dr = float(rng.choice([0.0, 0.05, 0.3, 2.0])) * g.range * 0.1
            dets.append(det(0, 0, g.range + dr, g.azimuth, float(rng.uniform(0.1, 1.0))))
        for threshold in (0.5, 0.7, 0.9):
            m = match_detections(dets, gts, threshold, KAPPA)
            assert m.true_positives == optimal_true_positives(dets, gts, threshold, KAPPA)
            assert m.true_positives <= min(len(dets), len(gts))


class TestInterpolatedAP:
    def test_half_right_curve(self):
        # precision 1 up to recall 0.5, nothing beyond: 51 of 101 recall points
        assert interpolated_ap([True] * 5 + [False] * 5, 10) == pytest.approx(51 / 101)

    def test_alternating_curve_by_hand(self):
        # ranks: TP FP TP -> precision envelope 1.0 until recall 0.5, 2/3 until recall 1.0
        assert interpolated_ap([True, False, True], 2) == pytest.approx((51 * 1.0 + 50 * 2 / 3) / 101)

    def test_empty_and_undefined(self):
        assert interpolated_ap([], 4) == 0.0
        with pytest.raises(ValueError):
            interpolated_ap([True], 0)


class TestEvaluate:
    def test_half_right_fixture(self):
        dets, gts = half_right_fixture()
        result = evaluate(dets, gts, KAPPA)
        assert result.thresholds == list(OLS_THRESHOLDS)
        assert all(ap == pytest.approx(51 / 101) for ap in result.ap_per_threshold)
        assert result.ap == pytest.approx(51 / 101)
        assert result.ar == pytest.approx(0.5)
        assert result.counts[0.5] == (5, 5, 5)

    def test_perfect_detections(self):
        gts = [gt(f, f % 3, 5.0 + f, 0.05 * f) for f in range(9)]
        dets = [det(g.frame_id, g.class_id, g.range, g.azimuth, 1.0) for g in gts]
        result = evaluate(dets, gts, KAPPA)
        assert result.ap == pytest.approx(1.0)
        assert result.ar == pytest.approx(1.0)
        assert all(result.per_class[c] == (pytest.approx(1.0), pytest.approx(1.0)) for c in range(3))

    def test_wrong_class_scores_zero(self):
        gts = [gt(f, 0, 8.0, 0.0) for f in range(4)]
        dets = [det(f, 2, 8.0, 0.0, 0.9) for f in range(4)]
        result = evaluate(dets, gts, KAPPA)
        assert result.ap == 0.0 and result.ar == 0.0
        assert result.per_class[2] == (None, None)

    def test_no_ground_truth_is_not_applicable(self):
        result = evaluate([det(0, 0, 5.0, 0.0, 0.7)], [], KAPPA)
        assert result.ap is None and result.ar is None
        assert all(ap is None for ap in result.ap_per_threshold)
        assert result.counts[0.5] == (0, 1, 0)
        assert "n/a" in format_eval_table(result)
        assert "AP=n/a" in format_key_values(result)

    def test_macro_average_over_classes_with_ground_truth(self):
        gts = [gt(0, 0, 8.0, 0.0), gt(1, 2, 12.0, 0.2)]
        dets = [det(0, 0, 8.0, 0.0, 0.9)]
        result = evaluate(dets, gts, KAPPA)
        assert result.ap == pytest.approx(0.5)
        assert result.per_class[1] == (None, None)

    @pytest.mark.parametrize("seed", range(4))
    def test_invariant_to_detection_order(self, seed):
        dets, gts = separated_fixture(seed)
        shuffled = list(dets)
        np.random.default_rng(seed).shuffle(shuffled)
        a, b = evaluate(dets, gts, KAPPA), evaluate(shuffled, gts, KAPPA)
        assert a.ap_per_threshold == b.ap_per_threshold
        assert a.ar_per_threshold == b.ar_per_threshold
        assert a.counts == b.counts

    @pytest.mark.parametrize("seed", range(4))
    def test_lowest_confidence_false_positive_never_helps(self, seed):
        dets, gts = separated_fixture(seed)
        base = evaluate(dets, gts, KAPPA)
        extra = dets + [det(0, c, 4.0, -1.0, 0.01) for c in range(3)]
        worse = evaluate(extra, gts, KAPPA)
        for before, after in zip(base.ap_per_threshold, worse.ap_per_threshold):
            assert after <= before + 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_removing_a_false_positive_never_hurts(self, seed):
        dets, gts = separated_fixture(seed)
        stray = [d for d in dets if d.range == 3.0]
        assert stray
        kept = [d for d in dets if d is not stray[0]]
        before, after = evaluate(dets, gts, KAPPA), evaluate(kept, gts, KAPPA)
        for a, b in zip(before.ap_per_threshold, after.ap_per_threshold):
            assert b >= a - 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_stricter_threshold_never_raises_scores(self, seed):
        dets, gts = separated_fixture(seed)
        result = evaluate(dets, gts, KAPPA)
        for lo, hi in zip(result.ar_per_threshold, result.ar_per_threshold[1:]):
            assert hi <= lo + 1e-12
        for lo, hi in zip(result.ap_per_threshold, result.ap_per_threshold[1:]):
            assert hi <= lo + 1e-12
        assert all(0.0 <= v <= 1.0 for v in result.ap_per_threshold + result.ar_per_threshold)


class TestLocalization:
    def test_errors_of_matched_pairs(self):
        gts = [gt(0, 0, 10.0, 0.0), gt(0, 2, 15.0, 0.0)]
        anns = [det(0, 0, 10.2, 0.0, 0.9), det(0, 2, 14.7, 0.0, 0.8), det(0, 1, 5.0, 0.0, 0.5)]
        stats = localization_errors(anns, gts, KAPPA, min_ols=0.1)
        assert stats[0].count == 1 and stats[0].mean_range_error == pytest.approx(0.2)
        assert stats[2].mean_distance_error == pytest.approx(0.3)
        assert stats[1].count == 0 and stats[1].mean_range_error is None
        pooled = pooled_localization(stats)
        assert pooled.count == 2
        assert pooled.mean_range_error == pytest.approx(0.25)

    def test_nothing_matched(self):
        pooled = pooled_localization(localization_errors([], [gt(0, 0, 5.0, 0.0)], KAPPA))
        assert pooled.count == 0 and pooled.mean_range_error is None
