"""
Tests for ConfMap generation, location-based NMS and overlapped-snippet
averaging.

L-NMS is checked against an exhaustive oracle: among all subsets of the
candidate peaks exactly one is self-consistent (every peak is kept iff no
kept peak ahead of it in confidence order overlaps it), and it must be
the one l_nms returns.
"""
import itertools
import math

import numpy as np
import pytest

from confmap import OverlapAccumulator, average_overlapped, confmap_bump, confmap_from_annotations, l_nms
from geometry import grid_bev, grid_map, grid_unmap, ols
from models import ConfMapSet, KappaTable, ObjectRecord, RadarConfig, ShapeError, ValidationError

CFG = RadarConfig(range_bins=16, samples_per_chirp=16, azimuth_bins=16)
KAPPA = KappaTable(0.1, 0.15, 0.2)


def record_at_cell(frame_id, class_id, row, col, confidence=1.0, source="crf"):
    loc = grid_unmap(row, col, CFG)
    return ObjectRecord(frame_id, class_id, loc.range, loc.azimuth, confidence, source)


def nms_oracle(candidates, kappa, threshold):
    order = sorted(candidates, key=lambda r: (-r.confidence, r.class_id, r.range, r.azimuth))
    consistent = []
    for size in range(len(order) + 1):
        for subset in itertools.combinations(range(len(order)), size):
            chosen = set(subset)
            ok = True
            for i, rec in enumerate(order):
                suppressed = any(j in chosen and ols(order[j], rec, kappa) > threshold for j in range(i))
                if (i in chosen) == suppressed:
                    ok = False
                    break
            if ok:
                consistent.append([order[i] for i in subset])
    assert len(consistent) == 1
    return consistent[0]


class TestConfMapBump:
    def test_unit_peak_at_annotation_cell(self):
        ann = record_at_cell(0, 2, 9, 5)
        bump = confmap_bump(ann, KAPPA, CFG)
        assert bump.shape == (CFG.range_bins, CFG.azimuth_bins)
        assert bump[9, 5] == 1.0
        assert np.unravel_index(np.argmax(bump), bump.shape) == (9, 5)

    def test_values_follow_bev_distance(self):
        ann = record_at_cell(0, 1, 10, 8)
        bump = confmap_bump(ann, KAPPA, CFG)
        xs, zs = grid_bev(CFG)
        spread = 10 * CFG.range_resolution * KAPPA.cyclist
        for row, col in [(11, 8), (10, 9), (7, 12)]:
            d2 = (xs[row, col] - xs[10, 8]) ** 2 + (zs[row, col] - zs[10, 8]) ** 2
            assert bump[row, col] == pytest.approx(math.exp(-d2 / (2 * spread * spread)))

    def test_wider_class_gives_wider_bump(self):
        ped = confmap_bump(record_at_cell(0, 0, 10, 8), KAPPA, CFG)
        car = confmap_bump(record_at_cell(0, 2, 10, 8), KAPPA, CFG)
        assert car.sum() > ped.sum()
        assert np.all(car >= ped - 1e-12)

    def test_bump_snaps_to_the_nearest_cell(self):
        loc = grid_unmap(6, 4, CFG)
        off_center = ObjectRecord(0, 0, loc.range + 0.3 * CFG.range_resolution, loc.azimuth)
        assert np.unravel_index(np.argmax(confmap_bump(off_center, KAPPA, CFG)), (16, 16)) == (6, 4)


class TestConfMapFromAnnotations:
    def test_slots_and_classes(self):
        anns = [record_at_cell(3, 0, 4, 4), record_at_cell(5, 2, 12, 10), record_at_cell(9, 1, 8, 8)]
        target = confmap_from_annotations(anns, KAPPA, CFG, frame_ids=[3, 4, 5])
        assert target.values.shape == (3, 3, 16, 16)
        assert target.values.dtype == np.float32
        assert target.frame_ids == [3, 4, 5]
        assert target.frame(3)[0, 4, 4] == 1.0
        assert target.frame(5)[2, 12, 10] == 1.0
        assert not target.frame(4).any()
        # frame 9 is not in the snippet
        assert not target.values[1].any()

    def test_low_confidence_and_off_grid_are_skipped(self):
        anns = [
            record_at_cell(0, 0, 4, 4, confidence=0.05),
            ObjectRecord(0, 1, CFG.max_range + 3.0, 0.0, 0.9),
        ]
        target = confmap_from_annotations(anns, KAPPA, CFG, frame_ids=[0], min_confidence=0.1)
        assert not target.values.any()

    def test_classless_records_are_skipped(self):
        peak = record_at_cell(0, -1, 6, 6, confidence=0.9, source="cfar")
        target = confmap_from_annotations([peak], KAPPA, CFG, frame_ids=[0])
        assert not target.values.any()

    def test_same_class_bumps_combine_by_max(self):
        a, b = record_at_cell(0, 2, 5, 5), record_at_cell(0, 2, 11, 9)
        target = confmap_from_annotations([a, b], KAPPA, CFG, frame_ids=[0])
        expected = np.maximum(confmap_bump(a, KAPPA, CFG), confmap_bump(b, KAPPA, CFG))
        np.testing.assert_allclose(target.values[2, 0], expected, rtol=1e-6, atol=1e-7)
        assert target.values.max() <= 1.0


class TestLNMS:
    def test_recovers_annotations_from_their_confmap(self):
        anns = [record_at_cell(0, 0, 3, 3), record_at_cell(0, 1, 8, 12), record_at_cell(0, 2, 13, 6)]
        target = confmap_from_annotations(anns, KAPPA, CFG, frame_ids=[0])
        dets = l_nms(target.frame(0), KAPPA, CFG, ols_threshold=0.3, floor=0.05, frame_id=0)
        found = sorted((d.class_id,) + grid_map(d.location, CFG) for d in dets)
        assert found == [(0, 3, 3), (1, 8, 12), (2, 13, 6)]
        assert all(d.source == "rodnet" and d.confidence == pytest.approx(1.0) for d in dets)

    @pytest.mark.parametrize("seed", range(20))
    def test_round_trip_on_random_separated_annotations(self, seed):
        rng = np.random.default_rng(500 + seed)
        cells = [(r, c) for r in (3, 8, 14) for c in (2, 6, 10, 14)]
        picks = rng.choice(len(cells), size=int(rng.integers(1, 6)), replace=False)
        anns = [record_at_cell(0, int(rng.integers(0, 3)), *cells[k]) for k in picks]
        target = confmap_from_annotations(anns, KAPPA, CFG, frame_ids=[0])
        dets = l_nms(target.frame(0), KAPPA, CFG, ols_threshold=0.3, floor=0.05)
        found = sorted((d.class_id,) + grid_map(d.location, CFG) for d in dets)
        assert found == sorted((a.class_id,) + grid_map(a.location, CFG) for a in anns)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        conf = np.zeros((3, 16, 16))
        cells = [(r, c) for r in range(2, 16, 2) for c in range(0, 16, 2)]
        picks = rng.choice(len(cells), size=int(rng.integers(2, 7)), replace=False)
        candidates = []
        for k in picks:
            row, col = cells[k]
            class_id = int(rng.integers(0, 3))
            value = float(rng.uniform(0.2, 1.0))
            conf[class_id, row, col] = value
            candidates.append(record_at_cell(0, class_id, row, col, value, "rodnet"))
        kappa = KappaTable(0.3, 0.3, 0.3)
        dets = l_nms(conf, kappa, CFG, ols_threshold=0.3, floor=0.05)
        expected = nms_oracle(candidates, kappa, 0.3)
        key = lambda r: (r.class_id, round(r.range, 9), round(r.azimuth, 9), round(r.confidence, 9))
        assert sorted(map(key, dets)) == sorted(map(key, expected))

    def test_suppresses_across_classes(self):
        conf = np.zeros((3, 16, 16))
        conf[2, 10, 8] = 0.9
        conf[0, 10, 9] = 0.6
        dets = l_nms(conf, KappaTable(0.3, 0.3, 0.3), CFG, ols_threshold=0.3)
        assert [(d.class_id, d.confidence) for d in dets] == [(2, 0.9)]

    def test_output_is_confidence_ordered_and_above_floor(self):
        conf = np.zeros((3, 16, 16))
        conf[0, 2, 2], conf[1, 8, 8], conf[2, 14, 14], conf[2, 14, 2] = 0.3, 0.8, 0.55, 0.01
        dets = l_nms(conf, KAPPA, CFG, floor=0.05)
        assert [d.confidence for d in dets] == [0.8, 0.55, 0.3]

    def test_empty_map(self):
        assert l_nms(np.zeros((3, 16, 16)), KAPPA, CFG) == []

    def test_rejects_full_confmap_set(self):
        with pytest.raises(ShapeError):
            l_nms(np.zeros((3, 2, 16, 16)), KAPPA, CFG)


class TestOverlapAveraging:
    def test_average(self):
        a, b = np.full((3, 4, 4), 0.2), np.full((3, 4, 4), 0.6)
        np.testing.assert_allclose(average_overlapped([a, b]), 0.4)
        with pytest.raises(ValidationError):
            average_overlapped([])

    def test_accumulator_tracks_coverage(self):
        rng = np.random.default_rng(1)
        first = ConfMapSet(rng.uniform(size=(3, 4, 8, 8)), frame_ids=[0, 1, 2, 3])
        second = ConfMapSet(rng.uniform(size=(3, 4, 8, 8)), frame_ids=[2, 3, 4, 5])
        acc = OverlapAccumulator()
        acc.add(first)
        acc.add(second)
        assert acc.frame_ids() == [0, 1, 2, 3, 4, 5]
        assert [acc.coverage(f) for f in range(6)] == [1, 1, 2, 2, 1, 1]
        np.testing.assert_allclose(acc.pop_averaged(3), (first.values[:, 3] + second.values[:, 1]) / 2)
        np.testing.assert_allclose(acc.pop_averaged(0), first.values[:, 0])
        assert acc.coverage(3) == 0
        assert acc.frame_ids() == [1, 2, 4, 5]
