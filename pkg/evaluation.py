"""
OLS-based detection evaluation.

Detections are matched to ground truth per frame and class, greedily in
confidence order. AP is the 101-point interpolated area under the
confidence-swept precision-recall curve of each class, macro-averaged over
the classes that have ground truth; AR is recall with every detection kept.
Both are averaged over the OLS thresholds 0.5:0.05:0.9.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geometry import ols
from models import NUM_CLASSES, EvalResult, KappaTable, LocalizationStats, ObjectRecord

logger = logging.getLogger(__name__)

OLS_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(9))
RECALL_POINTS = np.arange(101) / 100.0


@dataclass
class Matching:
    """Indices refer to the detection and ground-truth sequences passed in."""
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)  # (det, gt, ols)
    false_positives: List[int] = field(default_factory=list)
    false_negatives: List[int] = field(default_factory=list)

    @property
    def true_positives(self) -> int:
        return len(self.pairs)


def _gt_key(gt: ObjectRecord) -> Tuple:
    return (gt.frame_id, gt.class_id, gt.range, gt.azimuth)


def match_detections(dets: Sequence[ObjectRecord], gts: Sequence[ObjectRecord], ols_threshold: float,
                     kappa: KappaTable) -> Matching:
    """
    Greedy one-to-one matching of detections to same-frame, same-class ground truth.

    Detections are visited in ``ObjectRecord.sort_key`` order; each takes the
    unmatched ground truth with the highest OLS (ground truth as reference)
    when that OLS reaches the threshold.

    Args:
        dets: Detections in any order
        gts: Ground-truth records
        ols_threshold: Minimum OLS for a match
        kappa: Per-class tolerance

    Returns:
        Matching with detection/ground-truth indices
    """
    pool: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    for j in sorted(range(len(gts)), key=lambda j: _gt_key(gts[j])):
        pool[(gts[j].frame_id, gts[j].class_id)].append(j)

    matching = Matching()
    taken = set()
    for i in sorted(range(len(dets)), key=lambda i: dets[i].sort_key()):
        det = dets[i]
        best_j, best_score = -1, -1.0
        for j in pool.get((det.frame_id, det.class_id), ()):
            if j in taken:
                continue
            score = ols(gts[j], det, kappa)
            if score > best_score:
                best_j, best_score = j, score
        if best_j >= 0 and best_score >= ols_threshold:
            taken.add(best_j)
            matching.pairs.append((i, best_j, best_score))
        else:
            matching.false_positives.append(i)
    matching.false_negatives = [j for j in range(len(gts)) if j not in taken]
    return matching


def interpolated_ap(tp_flags: Sequence[bool], num_gt: int) -> float:
    """
    101-point interpolated AP of a confidence-ordered list of match flags.

    Precision at recall r is the best precision reached at any recall >= r,
    zero when r is never reached.
    """
    if num_gt <= 0:
        raise ValueError("AP is undefined without ground truth")
    flags = np.asarray(tp_flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, flags.size + 1)
    recall = tp / num_gt
    # running max from the right gives the precision envelope
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < flags.size, envelope[np.minimum(idx, flags.size - 1)], 0.0)
    return float(sampled.mean())


def _class_scores(dets: Sequence[ObjectRecord], matching: Matching, num_gt: int) -> Tuple[float, float]:
    matched = {i for i, _, _ in matching.pairs}
    order = sorted(range(len(dets)), key=lambda i: dets[i].sort_key())
    flags = [i in matched for i in order]
    return interpolated_ap(flags, num_gt), len(matched) / num_gt


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def evaluate(dets: Sequence[ObjectRecord], gts: Sequence[ObjectRecord], kappa: KappaTable,
             thresholds: Sequence[float] = OLS_THRESHOLDS) -> EvalResult:
    """
    AP and AR averaged over OLS thresholds.

    Classes without ground truth do not enter the macro average; with no
    ground truth at all every AP/AR is None. Their detections still count
    as false positives in ``counts``.

    Returns:
        EvalResult
    """
    by_class_det: Dict[int, List[ObjectRecord]] = defaultdict(list)
    by_class_gt: Dict[int, List[ObjectRecord]] = defaultdict(list)
    for det in dets:
        by_class_det[det.class_id].append(det)
    for gt in gts:
        by_class_gt[gt.class_id].append(gt)
    classes = sorted(set(by_class_det) | set(by_class_gt))
    if not gts:
        logger.warning("No ground truth to evaluate against; AP/AR reported as n/a")

    ap_rows, ar_rows = [], []
    per_class_ap: Dict[int, List[float]] = defaultdict(list)
    per_class_ar: Dict[int, List[float]] = defaultdict(list)
    counts: Dict[float, Tuple[int, int, int]] = {}
    for threshold in thresholds:
        tp = fp = fn = 0
        aps, ars = [], []
        for class_id in classes:
            c_dets, c_gts = by_class_det[class_id], by_class_gt[class_id]
            matching = match_detections(c_dets, c_gts, threshold, kappa)
            tp += matching.true_positives
            fp += len(matching.false_positives)
            fn += len(matching.false_negatives)
            if not c_gts:
                continue
            ap, ar = _class_scores(c_dets, matching, len(c_gts))
            aps.append(ap)
            ars.append(ar)
            per_class_ap[class_id].append(ap)
            per_class_ar[class_id].append(ar)
        counts[threshold] = (tp, fp, fn)
        ap_rows.append(_mean(aps))
        ar_rows.append(_mean(ars))

    per_class = {}
    for class_id in range(NUM_CLASSES):
        per_class[class_id] = (_mean(per_class_ap.get(class_id, [])), _mean(per_class_ar.get(class_id, [])))
    return EvalResult(
        thresholds=list(thresholds),
        ap_per_threshold=ap_rows,
        ar_per_threshold=ar_rows,
        ap=_mean(ap_rows),
        ar=_mean(ar_rows),
        per_class=per_class,
        counts=counts,
    )


def localization_errors(anns: Sequence[ObjectRecord], gts: Sequence[ObjectRecord], kappa: KappaTable,
                        min_ols: float = 0.1) -> Dict[int, LocalizationStats]:
    """
    Mean range and BEV distance error of annotations matched to ground truth.

    Matching is the evaluation matching at ``min_ols``; unmatched records
    are ignored. Classes without any match get None errors.
    """
    matching = match_detections(anns, gts, min_ols, kappa)
    range_err: Dict[int, List[float]] = defaultdict(list)
    dist_err: Dict[int, List[float]] = defaultdict(list)
    for i, j, _ in matching.pairs:
        ann, gt = anns[i], gts[j]
        (ax, az), (gx, gz) = ann.bev, gt.bev
        range_err[gt.class_id].append(abs(ann.range - gt.range))
        dist_err[gt.class_id].append(float(np.hypot(ax - gx, az - gz)))
    stats = {}
    for class_id in range(NUM_CLASSES):
        stats[class_id] = LocalizationStats(
            count=len(range_err[class_id]),
            mean_range_error=_mean(range_err[class_id]),
            mean_distance_error=_mean(dist_err[class_id]),
        )
    return stats


def pooled_localization(stats: Dict[int, LocalizationStats]) -> LocalizationStats:
    """Count-weighted mean over classes."""
    total = sum(s.count for s in stats.values())
    if total == 0:
        return LocalizationStats(0, None, None)
    mean_range = sum(s.count * s.mean_range_error for s in stats.values() if s.count) / total
    mean_dist = sum(s.count * s.mean_distance_error for s in stats.values() if s.count) / total
    return LocalizationStats(total, mean_range, mean_dist)
