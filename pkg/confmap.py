"""
ConfMap targets from annotations, and the student's post-processing:
location-based NMS and averaging of overlapped snippet predictions.
"""
import logging
import math
from typing import Dict, List, Sequence

import numpy as np

from geometry import grid_bev, grid_map, grid_unmap, ols
from models import (
    NUM_CLASSES,
    ConfMapSet,
    GeometryError,
    KappaTable,
    ObjectRecord,
    RadarConfig,
    ShapeError,
    ValidationError,
)
from teacher import peak_cells

logger = logging.getLogger(__name__)


def confmap_bump(ann: ObjectRecord, kappa: KappaTable, cfg: RadarConfig) -> np.ndarray:
    """
    (H, W) Gaussian with peak 1.0 at the annotation's cell.

    The value at a cell is exp(-d^2 / (2 (s kappa)^2)), d being the BEV
    distance in meters between cell centers and s the center's range
    (at least one range bin).
    """
    row, col = grid_map(ann.location, cfg)
    center = grid_unmap(row, col, cfg)
    cx, cz = center.range * math.sin(center.azimuth), center.range * math.cos(center.azimuth)
    xs, zs = grid_bev(cfg)
    s = max(center.range, cfg.range_resolution)
    spread = s * kappa.for_class(ann.class_id)
    d2 = (xs - cx) ** 2 + (zs - cz) ** 2
    return np.exp(-d2 / (2.0 * spread * spread))


def confmap_from_annotations(anns: Sequence[ObjectRecord], kappa: KappaTable, cfg: RadarConfig,
                             frame_ids: Sequence[int], min_confidence: float = 0.1) -> ConfMapSet:
    """
    Target ConfMaps for ``frame_ids`` (one T slot per id).

    Annotations below ``min_confidence``, outside the grid or without a
    class (classless CFAR peaks) are skipped; same-class bumps combine by
    pixelwise max.
    """
    slots = {fid: i for i, fid in enumerate(frame_ids)}
    values = np.zeros((NUM_CLASSES, len(frame_ids), cfg.range_bins, cfg.azimuth_bins), dtype=np.float32)
    dropped = 0
    classless = 0
    for ann in anns:
        slot = slots.get(ann.frame_id)
        if slot is None or ann.confidence < min_confidence:
            continue
        if not 0 <= ann.class_id < NUM_CLASSES:
            classless += 1
            continue
        try:
            bump = confmap_bump(ann, kappa, cfg)
        except GeometryError:
            dropped += 1
            continue
        np.maximum(values[ann.class_id, slot], bump, out=values[ann.class_id, slot])
    if dropped:
        logger.warning("Dropped %d annotation(s) outside the grid", dropped)
    if classless:
        logger.warning("Skipped %d annotation(s) without a valid class", classless)
    return ConfMapSet(values=values, frame_ids=list(frame_ids))


def l_nms(conf: np.ndarray, kappa: KappaTable, cfg: RadarConfig, ols_threshold: float = 0.3,
          floor: float = 0.05, frame_id: int = 0) -> List[ObjectRecord]:
    """
    Location-based NMS on one frame's (C_cls, H, W) ConfMaps.

    8-neighbour peaks of every class with confidence >= floor are pooled and
    visited by decreasing confidence; each emitted peak removes every
    remaining peak, of any class, whose OLS against it exceeds the threshold.
    The emitted peak is the OLS reference.

    Returns:
        Detections with source ``rodnet``
    """
    if conf.ndim != 3:
        raise ShapeError(f"l_nms expects a (C_cls, H, W) frame slice, got shape {conf.shape}")
    candidates = []
    for class_id, row, col, value in peak_cells(conf, floor):
        loc = grid_unmap(row, col, cfg)
        candidates.append(ObjectRecord(frame_id, class_id, loc.range, loc.azimuth, value, "rodnet"))
    candidates.sort(key=lambda rec: (-rec.confidence, rec.class_id, rec.range, rec.azimuth))
    kept: List[ObjectRecord] = []
    while candidates:
        best = candidates.pop(0)
        kept.append(best)
        candidates = [rec for rec in candidates if ols(best, rec, kappa) <= ols_threshold]
    return kept


def average_overlapped(confmaps: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel mean of the (C_cls, H, W) predictions of every snippet covering a frame."""
    if len(confmaps) == 0:
        raise ValidationError("no snippet covers this frame")
    stacked = np.stack([np.asarray(m, dtype=np.float64) for m in confmaps], axis=0)
    return stacked.mean(axis=0)


class OverlapAccumulator:
    """Collects snippet predictions per frame until the frame is averaged and released."""

    def __init__(self):
        self._pending: Dict[int, List[np.ndarray]] = {}

    def add(self, prediction: ConfMapSet) -> None:
        for t, frame_id in enumerate(prediction.frame_ids):
            self._pending.setdefault(frame_id, []).append(prediction.values[:, t])

    def frame_ids(self) -> List[int]:
        return sorted(self._pending)

    def coverage(self, frame_id: int) -> int:
        return len(self._pending.get(frame_id, ()))

    def pop_averaged(self, frame_id: int) -> np.ndarray:
        return average_overlapped(self._pending.pop(frame_id, []))
