"""
Camera-radar fusion teacher.

CA-CFAR finds radar peaks on the RF magnitude, camera detections and radar
peaks become Gaussian probability maps, and the per-class product of the
two is peak-detected into training annotations. Also hosts the camera
degrader that turns ground truth into noisy camera detections, and the
camera-only annotator used as the supervision baseline.
"""
import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate, maximum_filter

from geometry import cam_to_range_azimuth, grid_axes, grid_map, grid_unmap, range_azimuth_to_cam
from models import (
    NUM_CLASSES,
    CameraBEV,
    CameraDetection,
    FusionParams,
    GeometryError,
    ObjectRecord,
    RadarConfig,
    RangeAzimuth,
    ShapeError,
    ValidationError,
)

logger = logging.getLogger(__name__)

MAX_BEAM_ANGLE = math.radians(80.0)
FALLBACK_RADIUS_CELLS = 2


def cfar_mask(mag: np.ndarray, guard: Tuple[int, int], train: Tuple[int, int], scale: float) -> np.ndarray:
    """
    Boolean (H, W) mask of CA-CFAR detections reduced to 3x3 local maxima.

    The training ring is the (2(g+t)+1)^2 window minus the (2g+1)^2 guard
    window; border cells average over the part of the ring inside the grid.
    """
    if mag.ndim != 2:
        raise ShapeError(f"CFAR input must be 2-D, got shape {mag.shape}")
    g_r, g_a = guard
    t_r, t_a = train
    if min(g_r, g_a, t_r, t_a) < 0 or (t_r == 0 and t_a == 0):
        raise ValidationError(f"CFAR training band is empty for guard {guard}, train {train}")
    outer = (2 * (g_r + t_r) + 1, 2 * (g_a + t_a) + 1)
    inner = (2 * g_r + 1, 2 * g_a + 1)
    if outer[0] > mag.shape[0] or outer[1] > mag.shape[1]:
        raise ShapeError(f"CFAR window {outer} is larger than the {mag.shape} grid")
    mag = np.asarray(mag, dtype=np.float64)
    ones = np.ones_like(mag)
    ring_sum = (correlate(mag, np.ones(outer), mode="constant", cval=0.0)
                - correlate(mag, np.ones(inner), mode="constant", cval=0.0))
    ring_count = (correlate(ones, np.ones(outer), mode="constant", cval=0.0)
                  - correlate(ones, np.ones(inner), mode="constant", cval=0.0))
    noise = ring_sum / np.maximum(ring_count, 1.0)
    flagged = (mag > scale * noise) & (ring_count > 0)
    local_max = mag >= maximum_filter(mag, size=3, mode="constant", cval=-np.inf)
    return flagged & local_max


def ca_cfar_2d(mag: np.ndarray, guard: Tuple[int, int], train: Tuple[int, int], scale: float,
               cfg: RadarConfig, frame_id: int = 0) -> List[ObjectRecord]:
    """
    Classless radar peaks (class_id -1, source ``cfar``) at cell-center coordinates.

    Confidence is the peak magnitude relative to the strongest peak of the frame.
    """
    mask = cfar_mask(mag, guard, train, scale)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return []
    peak = float(mag[rows, cols].max())
    records = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        loc = grid_unmap(r, c, cfg)
        conf = float(mag[r, c]) / peak if peak > 0 else 1.0
        records.append(ObjectRecord(frame_id, -1, loc.range, loc.azimuth, conf, "cfar"))
    return records


def _gaussian_map(cfg: RadarConfig, mean: RangeAzimuth, range_std: float, azimuth_std: float) -> np.ndarray:
    """Separable Gaussian on the (range, azimuth) grid normalised to unit peak."""
    ranges, azimuths = grid_axes(cfg)
    along_range = np.exp(-((ranges - mean.range) ** 2) / (2.0 * range_std ** 2))
    along_azimuth = np.exp(-((azimuths - mean.azimuth) ** 2) / (2.0 * azimuth_std ** 2))
    surface = np.outer(along_range, along_azimuth)
    peak = surface.max()
    return surface / peak if peak > 0 else surface


def camera_range_std(det: CameraDetection, params: FusionParams) -> float:
    return det.depth * params.scale[det.class_id] / det.depth_confidence


def camera_prob_map(dets: Sequence[CameraDetection], params: FusionParams, cfg: RadarConfig) -> np.ndarray:
    """
    Per-class camera probability maps, (C_cls, H, W).

    Each detection contributes a unit-peak Gaussian with range std
    depth * s_cls / c and azimuth std delta_cls; a class map is the pixelwise
    max over its detections.
    """
    maps = np.zeros((NUM_CLASSES, cfg.range_bins, cfg.azimuth_bins))
    dropped = 0
    for det in dets:
        try:
            ra = cam_to_range_azimuth(det.bev, params.origin)
            grid_map(ra, cfg)
        except GeometryError:
            dropped += 1
            continue
        surface = _gaussian_map(cfg, ra, camera_range_std(det, params), params.azimuth_error[det.class_id])
        np.maximum(maps[det.class_id], surface, out=maps[det.class_id])
    if dropped:
        logger.warning("Dropped %d camera detection(s) outside the field of view", dropped)
    return maps


def radar_azimuth_std(azimuth: float, params: FusionParams) -> float:
    """eps0 / cos(theta), with theta clamped at 80 degrees."""
    return params.boresight_resolution / math.cos(min(abs(azimuth), MAX_BEAM_ANGLE))


def radar_prob_map(peaks: Sequence[ObjectRecord], params: FusionParams, cfg: RadarConfig) -> np.ndarray:
    """Classless radar probability map, (H, W): pixelwise max of per-peak unit-peak Gaussians."""
    surface = np.zeros((cfg.range_bins, cfg.azimuth_bins))
    for peak in peaks:
        if not (0 <= peak.range <= cfg.max_range and abs(peak.azimuth) <= math.pi / 2):
            continue
        bump = _gaussian_map(cfg, peak.location, params.range_std, radar_azimuth_std(peak.azimuth, params))
        np.maximum(surface, bump, out=surface)
    return surface


def peak_cells(maps: np.ndarray, floor: float) -> List[Tuple[int, int, int, float]]:
    """(class, row, col, value) of 8-neighbour local maxima with value >= floor, per class map."""
    neighbourhood = maximum_filter(maps, size=(1, 3, 3), mode="constant", cval=-np.inf)
    mask = (maps >= neighbourhood) & (maps >= floor) & (maps > 0)
    return [(int(c), int(r), int(w), float(maps[c, r, w])) for c, r, w in zip(*np.nonzero(mask))]


def crf_fuse_and_annotate(cam: np.ndarray, rad: np.ndarray, threshold: float, cfg: RadarConfig,
                          frame_id: int = 0) -> List[ObjectRecord]:
    """
    P_crf = P_cam * P_rad per class; local maxima >= threshold become ``crf`` annotations.

    Args:
        cam: (C_cls, H, W) camera maps
        rad: (H, W) radar map
        threshold: Minimum fused peak value

    Returns:
        Annotations at cell centers with confidence equal to the fused peak value
    """
    if cam.shape[1:] != rad.shape:
        raise ShapeError(f"camera maps {cam.shape[1:]} and radar map {rad.shape} are on different grids")
    fused = cam * rad[None]
    records = []
    for class_id, row, col, value in peak_cells(fused, threshold):
        loc = grid_unmap(row, col, cfg)
        records.append(ObjectRecord(frame_id, class_id, loc.range, loc.azimuth, value, "crf"))
    return records


def camera_only_annotations(dets: Sequence[CameraDetection], params: FusionParams,
                            cfg: RadarConfig) -> List[ObjectRecord]:
    """Camera detections as ``co`` annotations, confidence = depth confidence."""
    records = []
    dropped = 0
    for det in dets:
        try:
            ra = cam_to_range_azimuth(det.bev, params.origin)
            grid_map(ra, cfg)
        except GeometryError:
            dropped += 1
            continue
        records.append(ObjectRecord(det.frame_id, det.class_id, ra.range, ra.azimuth,
                                    det.depth_confidence, "co"))
    if dropped:
        logger.warning("Dropped %d camera detection(s) outside the field of view", dropped)
    return records


def _camera_fallback(dets: Sequence[CameraDetection], fused: List[ObjectRecord], params: FusionParams,
                     cfg: RadarConfig) -> List[ObjectRecord]:
    """Camera-only labels for detections with no same-class fused annotation nearby."""
    taken = [(rec.class_id,) + grid_map(rec.location, cfg) for rec in fused]
    extra = []
    for rec in camera_only_annotations(dets, params, cfg):
        row, col = grid_map(rec.location, cfg)
        supported = any(cls == rec.class_id and abs(r - row) <= FALLBACK_RADIUS_CELLS
                        and abs(c - col) <= FALLBACK_RADIUS_CELLS for cls, r, c in taken)
        if not supported:
            extra.append(rec)
    return extra


def annotate_frame(mag: np.ndarray, dets: Sequence[CameraDetection], params: FusionParams,
                   cfg: RadarConfig, guard: Tuple[int, int], train: Tuple[int, int], scale: float,
                   frame_id: int = 0) -> List[ObjectRecord]:
    """CFAR, probability maps and fusion for one frame's RF magnitude (H, W)."""
    if not dets:
        return []
    peaks = ca_cfar_2d(mag, guard, train, scale, cfg, frame_id)
    cam = camera_prob_map(dets, params, cfg)
    rad = radar_prob_map(peaks, params, cfg)
    records = crf_fuse_and_annotate(cam, rad, params.annotation_threshold, cfg, frame_id)
    if params.camera_only_fallback:
        records.extend(_camera_fallback(dets, records, params, cfg))
    logger.debug("Frame %d: %d radar peaks, %d camera detections, %d annotations",
                 frame_id, len(peaks), len(dets), len(records))
    return records


def degrade_camera(gts: Sequence[ObjectRecord], cfg: RadarConfig, origin: CameraBEV, rng: np.random.Generator,
                   range_bias: float = 0.02, range_noise: float = 1.0, azimuth_noise: float = 0.03,
                   dropout: float = 0.05, spurious_rate: float = 0.05, fov_deg: float = 180.0,
                   confidence_min: float = 0.6) -> List[CameraDetection]:
    """
    Emulate a camera localisation stack from ground truth.

    Range gets a bias proportional to depth plus Gaussian noise, azimuth gets
    Gaussian noise, detections drop out at ``dropout`` and each frame may gain
    spurious detections at ``spurious_rate`` (Poisson mean per frame).
    """
    half_fov = math.radians(fov_deg) / 2.0
    by_frame: Dict[int, List[ObjectRecord]] = {}
    for gt in gts:
        by_frame.setdefault(gt.frame_id, []).append(gt)
    dets: List[CameraDetection] = []
    for frame_id in sorted(by_frame):
        for gt in by_frame[frame_id]:
            drop = rng.random() < dropout
            noise_r = rng.normal(0.0, range_noise)
            noise_a = rng.normal(0.0, azimuth_noise)
            conf = float(rng.uniform(confidence_min, 1.0))
            if drop or abs(gt.azimuth) > half_fov:
                continue
            rho = max(0.1, gt.range * (1.0 + range_bias) + noise_r)
            theta = max(-half_fov, min(half_fov, gt.azimuth + noise_a))
            dets.append(_detection(frame_id, gt.class_id, rho, theta, origin, conf))
        for _ in range(int(rng.poisson(spurious_rate))):
            rho = float(rng.uniform(1.0, cfg.max_range - 1.0))
            theta = float(rng.uniform(-min(half_fov, 1.2), min(half_fov, 1.2)))
            class_id = int(rng.integers(0, NUM_CLASSES))
            dets.append(_detection(frame_id, class_id, rho, theta, origin, float(rng.uniform(confidence_min, 1.0))))
    return dets


def _detection(frame_id: int, class_id: int, rho: float, theta: float, origin: CameraBEV,
               conf: float) -> CameraDetection:
    bev = range_azimuth_to_cam(RangeAzimuth(rho, theta), origin)
    return CameraDetection(frame_id, class_id, bev, depth=rho, depth_confidence=conf)
