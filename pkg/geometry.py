"""
Coordinate transforms between camera bird's-eye view and radar
range-azimuth, the RF-image grid mapping, and the OLS similarity.

The azimuth axis of the grid is uniform in sin(theta): column ``c`` sits at
sin(theta_c) = (c - W // 2) / (W * rx_spacing).
"""
import math
from functools import lru_cache
from typing import Tuple

import numpy as np

from models import CameraBEV, GeometryError, KappaTable, ObjectRecord, RadarConfig, RangeAzimuth


def cam_to_range_azimuth(p: CameraBEV, origin: CameraBEV) -> RangeAzimuth:
    """
    Camera BEV point to radar range-azimuth.

    Raises:
        GeometryError: point on or behind the radar plane
    """
    dx = p.x - origin.x
    dz = p.z - origin.z
    if dz <= 0:
        raise GeometryError(f"point ({p.x:.3f}, {p.z:.3f}) is not in front of the radar origin")
    return RangeAzimuth(math.hypot(dx, dz), math.atan(dx / dz))


def range_azimuth_to_cam(ra: RangeAzimuth, origin: CameraBEV) -> CameraBEV:
    return CameraBEV(origin.x + ra.range * math.sin(ra.azimuth), origin.z + ra.range * math.cos(ra.azimuth))


def sin_step(cfg: RadarConfig) -> float:
    """Spacing of the azimuth grid in sin(theta)."""
    return 1.0 / (cfg.azimuth_bins * cfg.rx_spacing)


def azimuth_to_column(azimuth: float, cfg: RadarConfig) -> float:
    """Fractional column of an azimuth on the sin grid."""
    return math.sin(azimuth) / sin_step(cfg) + cfg.azimuth_bins // 2


def grid_map(ra: RangeAzimuth, cfg: RadarConfig) -> Tuple[int, int]:
    """
    Nearest (row, col) cell of a range-azimuth point.

    Raises:
        GeometryError: point outside the grid
    """
    if ra.range < 0 or abs(ra.azimuth) > math.pi / 2:
        raise GeometryError(f"({ra.range:.3f} m, {ra.azimuth:.4f} rad) is outside the field of view")
    row = int(math.floor(ra.range / cfg.range_resolution + 0.5))
    col = int(math.floor(azimuth_to_column(ra.azimuth, cfg) + 0.5))
    if row >= cfg.range_bins or not 0 <= col < cfg.azimuth_bins:
        raise GeometryError(
            f"({ra.range:.3f} m, {ra.azimuth:.4f} rad) maps to cell ({row}, {col}) outside the "
            f"{cfg.range_bins}x{cfg.azimuth_bins} grid"
        )
    return row, col


def in_grid(ra: RangeAzimuth, cfg: RadarConfig) -> bool:
    try:
        grid_map(ra, cfg)
    except GeometryError:
        return False
    return True


def grid_unmap(row: int, col: int, cfg: RadarConfig) -> RangeAzimuth:
    """Bin-center coordinates of a cell."""
    sin_theta = (col - cfg.azimuth_bins // 2) * sin_step(cfg)
    return RangeAzimuth(row * cfg.range_resolution, math.asin(max(-1.0, min(1.0, sin_theta))))


@lru_cache(maxsize=16)
def grid_axes(cfg: RadarConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(range centers (H,), azimuth centers (W,)) in meters and radians."""
    ranges = np.arange(cfg.range_bins) * cfg.range_resolution
    sines = (np.arange(cfg.azimuth_bins) - cfg.azimuth_bins // 2) * sin_step(cfg)
    return ranges, np.arcsin(np.clip(sines, -1.0, 1.0))


@lru_cache(maxsize=16)
def grid_bev(cfg: RadarConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(x, z) BEV meters of every cell center, each (H, W)."""
    ranges, azimuths = grid_axes(cfg)
    return np.outer(ranges, np.sin(azimuths)), np.outer(ranges, np.cos(azimuths))


def bev_distance(a: ObjectRecord, b: ObjectRecord) -> float:
    ax, az = a.bev
    bx, bz = b.bev
    return math.hypot(ax - bx, az - bz)


def ols(a: ObjectRecord, b: ObjectRecord, kappa: KappaTable) -> float:
    """
    Object location similarity exp(-d^2 / (2 (s kappa)^2)).

    ``a`` is the reference record: its class picks kappa and its range is s.
    """
    d = bev_distance(a, b)
    s = a.range
    if s <= 0:
        return 1.0 if d == 0 else 0.0
    spread = s * kappa.for_class(a.class_id)
    return math.exp(-d * d / (2.0 * spread * spread))
