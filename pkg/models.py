"""
Data models for the radar object detection pipeline.

Every record that crosses a module boundary lives here, together with the
exception hierarchy the CLI maps onto exit codes.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

CLASS_NAMES = ("pedestrian", "cyclist", "car")
NUM_CLASSES = len(CLASS_NAMES)

SOURCES = ("crf", "co", "cfar", "human", "rodnet")


class RodforgeError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(RodforgeError, ValueError):
    """Bad user input: malformed files, inconsistent config, wrong shapes."""


class ShapeError(ValidationError):
    """Tensor, kernel or offset field with an incompatible shape."""


class ConfigError(ValidationError):
    """Unknown config key, unparsable value or inconsistent radar parameters."""


class FormatError(ValidationError):
    """Malformed text record or binary header."""


class GeometryError(ValidationError):
    """Point behind the radar plane or outside the range-azimuth grid."""


class TrainingError(RodforgeError):
    """Training could not proceed (empty dataset, non-finite loss)."""


@dataclass(frozen=True)
class RadarConfig:
    """
    FMCW radar and RF-image grid parameters.

    The azimuth axis is a uniform sin(theta) grid produced by a zero-padded,
    FFT-shifted angle FFT, so column ``azimuth_bins // 2`` is boresight.
    """
    carrier_freq: float = 77e9
    frame_rate: float = 30.0
    chirps_per_frame: int = 255
    samples_per_chirp: int = 128
    num_rx: int = 8
    rx_spacing: float = 0.5  # wavelengths
    bandwidth: float = SPEED_OF_LIGHT / (2 * 0.23)
    range_bins: int = 112
    azimuth_bins: int = 121
    chirp_period: float = 2e-5  # seconds between chirp starts
    lpf_window: int = 4

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth)

    @property
    def max_range(self) -> float:
        return self.range_bins * self.range_resolution

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    def validate(self) -> None:
        """Raise ConfigError when the parameters cannot produce an RF image."""
        if self.samples_per_chirp < self.range_bins:
            raise ConfigError(
                f"radar.samples_per_chirp ({self.samples_per_chirp}) must be >= "
                f"radar.range_bins ({self.range_bins})"
            )
        if self.num_rx < 2:
            raise ConfigError(f"radar.num_rx must be >= 2, got {self.num_rx}")
        if self.azimuth_bins < self.num_rx:
            raise ConfigError(
                f"radar.azimuth_bins ({self.azimuth_bins}) must be >= radar.num_rx ({self.num_rx})"
            )
        if self.chirps_per_frame < 1:
            raise ConfigError("radar.chirps_per_frame must be positive")
        if self.lpf_window < 1:
            raise ConfigError("radar.lpf_window must be >= 1")
        for name in ("carrier_freq", "frame_rate", "bandwidth", "chirp_period", "rx_spacing"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"radar.{name} must be positive")


@dataclass
class SceneObject:
    """One reflector in a simulated frame."""
    class_id: int  # 0 pedestrian, 1 cyclist, 2 car
    range: float  # meters
    azimuth: float  # radians, positive to the right
    radial_velocity: float = 0.0  # m/s
    rcs: float = 1.0  # echo amplitude
    extent: float = 0.0  # meters of range spread


@dataclass
class RawFrame:
    """Complex beat samples of one frame, shape (num_rx, chirps_per_frame, samples_per_chirp)."""
    samples: np.ndarray
    skipped: int = 0  # objects dropped for lying outside the field of view


@dataclass
class RFFrame:
    """Complex range-azimuth image of one chirp, shape (range_bins, azimuth_bins)."""
    image: np.ndarray
    frame_id: int
    timestamp: float
    chirp: int = 0


@dataclass(frozen=True)
class RangeAzimuth:
    range: float  # meters
    azimuth: float  # radians


@dataclass(frozen=True)
class CameraBEV:
    x: float  # lateral meters
    z: float  # forward meters


@dataclass(frozen=True)
class KappaTable:
    """Per-class location error tolerance used by OLS and ConfMap widths."""
    pedestrian: float = 0.02
    cyclist: float = 0.03
    car: float = 0.05

    def for_class(self, class_id: int) -> float:
        return (self.pedestrian, self.cyclist, self.car)[class_id]


@dataclass
class CameraDetection:
    """A camera-side object location in bird's-eye view."""
    frame_id: int
    class_id: int
    bev: CameraBEV
    depth: float
    depth_confidence: float = 1.0


@dataclass(frozen=True)
class FusionParams:
    """
    Camera and radar probability-map widths plus annotation policy.

    Attributes:
        scale: Per-class scale constant; camera range std is depth * scale / confidence.
        azimuth_error: Per-class camera azimuth std in radians.
        range_std: Radar range std in meters.
        boresight_resolution: Radar azimuth std at boresight in radians.
        annotation_threshold: Minimum fused peak value kept as an annotation.
        origin: Radar origin in the camera bird's-eye view.
        camera_only_fallback: Emit camera-only labels where fusion finds no radar support.
    """
    scale: Tuple[float, float, float] = (0.08, 0.1, 0.12)
    azimuth_error: Tuple[float, float, float] = (0.05, 0.05, 0.08)
    range_std: float = 0.23
    boresight_resolution: float = 0.13
    annotation_threshold: float = 0.1
    origin: CameraBEV = CameraBEV(0.0, 0.0)
    camera_only_fallback: bool = False


@dataclass
class ObjectRecord:
    """A detection, annotation or ground-truth object on the range-azimuth plane."""
    frame_id: int
    class_id: int
    range: float
    azimuth: float
    confidence: float = 1.0
    source: str = "human"

    @property
    def location(self) -> RangeAzimuth:
        return RangeAzimuth(self.range, self.azimuth)

    @property
    def bev(self) -> Tuple[float, float]:
        """(x, z) in meters relative to the radar."""
        return (self.range * math.sin(self.azimuth), self.range * math.cos(self.azimuth))

    def sort_key(self) -> Tuple:
        """Confidence descending, then frame, location and class for stable ties."""
        return (-self.confidence, self.frame_id, self.range, self.azimuth, self.class_id)


@dataclass
class ConfMapSet:
    """Per-class confidence maps, values shape (C_cls, T, H, W) in [0, 1]."""
    values: np.ndarray
    frame_ids: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ShapeError(f"ConfMapSet values must be 4-D (C, T, H, W), got shape {self.values.shape}")
        if not self.frame_ids:
            self.frame_ids = list(range(self.values.shape[1]))
        if len(self.frame_ids) != self.values.shape[1]:
            raise ShapeError(
                f"ConfMapSet has {self.values.shape[1]} frames on the T axis "
                f"but {len(self.frame_ids)} frame ids"
            )

    def frame(self, frame_id: int) -> np.ndarray:
        """(C_cls, H, W) slice for one frame."""
        return self.values[:, self.frame_ids.index(frame_id)]


@dataclass
class LocalizationStats:
    """Matched-pair location error for one class."""
    count: int
    mean_range_error: Optional[float]
    mean_distance_error: Optional[float]


@dataclass
class EvalResult:
    """
    OLS-based detection metrics.

    AP/AR entries are None ("n/a") when no ground truth exists.
    """
    thresholds: List[float]
    ap_per_threshold: List[Optional[float]]
    ar_per_threshold: List[Optional[float]]
    ap: Optional[float]
    ar: Optional[float]
    per_class: Dict[int, Tuple[Optional[float], Optional[float]]]
    counts: Dict[float, Tuple[int, int, int]]  # threshold -> (TP, FP, FN)
