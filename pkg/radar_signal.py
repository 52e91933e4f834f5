"""
Synthetic FMCW scenes and the RF-image chain.

simulate_frame renders point reflectors as complex beat signals on a
far-field uniform linear array; rf_image_from_raw turns them into
range-azimuth images with a range FFT, a moving-average low-pass across
chirps and a zero-padded, FFT-shifted angle FFT.
"""
import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d

from geometry import in_grid
from models import (
    NUM_CLASSES,
    ObjectRecord,
    RadarConfig,
    RawFrame,
    RFFrame,
    SceneObject,
    ShapeError,
    ValidationError,
)

logger = logging.getLogger(__name__)

C_RF = 2

# class_id -> (rcs, extent m, typical speed m/s)
CLASS_PROFILES = {
    0: (0.6, 0.3, 1.4),
    1: (0.9, 0.8, 4.0),
    2: (1.6, 2.0, 7.0),
}


def in_field_of_view(obj: SceneObject, cfg: RadarConfig) -> bool:
    return 0.0 <= obj.range <= cfg.max_range and abs(obj.azimuth) <= math.pi / 2


def _range_taper(extent: float, cfg: RadarConfig) -> np.ndarray:
    """
    Gaussian window over fast-time samples.

    Blurs the range response with a Gaussian of std extent / 4 meters, so the
    object covers about ``extent`` meters; the window has unit mean so the
    peak amplitude stays at rcs.
    """
    samples = cfg.samples_per_chirp
    if extent <= 0:
        return np.ones(samples)
    sigma_bins = extent / (4.0 * cfg.range_resolution)
    sigma_samples = samples / (2.0 * math.pi * sigma_bins)
    k = np.arange(samples) - (samples - 1) / 2.0
    window = np.exp(-k * k / (2.0 * sigma_samples * sigma_samples))
    return window / window.mean()


def object_echo(obj: SceneObject, cfg: RadarConfig) -> np.ndarray:
    """Noise-free beat samples of one reflector, (num_rx, chirps, samples)."""
    k = np.arange(cfg.samples_per_chirp)
    m = np.arange(cfg.chirps_per_frame)
    a = np.arange(cfg.num_rx)
    fast = np.exp(2j * np.pi * k * obj.range / (cfg.range_resolution * cfg.samples_per_chirp))
    fast = fast * _range_taper(obj.extent, cfg)
    slow = np.exp(4j * np.pi * obj.radial_velocity * cfg.chirp_period * m / cfg.wavelength)
    spatial = np.exp(2j * np.pi * cfg.rx_spacing * a * math.sin(obj.azimuth))
    return obj.rcs * spatial[:, None, None] * slow[None, :, None] * fast[None, None, :]


def simulate_frame(scene: Sequence[SceneObject], cfg: RadarConfig, noise_sigma: float,
                   seed) -> RawFrame:
    """
    Superpose object echoes plus circular Gaussian noise.

    Objects outside the field of view are skipped and counted.

    Args:
        scene: Reflectors of this frame
        cfg: Radar configuration
        noise_sigma: Complex noise standard deviation
        seed: Anything np.random.default_rng accepts

    Returns:
        RawFrame with samples (num_rx, chirps_per_frame, samples_per_chirp)
    """
    cfg.validate()
    shape = (cfg.num_rx, cfg.chirps_per_frame, cfg.samples_per_chirp)
    samples = np.zeros(shape, dtype=np.complex128)
    skipped = 0
    for obj in scene:
        if not in_field_of_view(obj, cfg):
            skipped += 1
            continue
        samples += object_echo(obj, cfg)
    if skipped:
        logger.warning("Skipped %d object(s) outside the field of view", skipped)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        scale = noise_sigma / math.sqrt(2.0)
        samples += scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return RawFrame(samples=samples, skipped=skipped)


def chirp_indices(chirps_per_frame: int, n: int) -> List[int]:
    """n evenly spaced chirps starting at 0."""
    if n < 1 or n > chirps_per_frame:
        raise ValidationError(f"cannot select {n} chirps out of {chirps_per_frame}")
    step = chirps_per_frame // n
    return [i * step for i in range(n)]


def rf_image_from_raw(raw: RawFrame, cfg: RadarConfig, chirps: Optional[Iterable[int]] = None,
                      frame_id: int = 0) -> List[RFFrame]:
    """
    Range FFT, chirp low-pass and angle FFT.

    Args:
        raw: Beat samples of one frame
        cfg: Radar configuration
        chirps: Chirp indices to keep (default: all)
        frame_id: Frame number stamped on the outputs

    Returns:
        One RFFrame per kept chirp, images (range_bins, azimuth_bins)
    """
    cfg.validate()
    expected = (cfg.num_rx, cfg.chirps_per_frame, cfg.samples_per_chirp)
    if raw.samples.shape != expected:
        raise ShapeError(f"raw frame has shape {raw.samples.shape}, radar config expects {expected}")
    ranged = np.fft.fft(raw.samples, axis=2, norm="forward")[:, :, :cfg.range_bins]
    if cfg.lpf_window > 1:
        ranged = (uniform_filter1d(ranged.real, cfg.lpf_window, axis=1, mode="nearest")
                  + 1j * uniform_filter1d(ranged.imag, cfg.lpf_window, axis=1, mode="nearest"))
    keep = list(range(cfg.chirps_per_frame)) if chirps is None else list(chirps)
    selected = ranged[:, keep, :]
    angle = np.fft.fftshift(np.fft.fft(selected, n=cfg.azimuth_bins, axis=0), axes=0) / cfg.num_rx
    timestamp = frame_id / cfg.frame_rate
    return [
        RFFrame(image=np.ascontiguousarray(angle[:, i, :].T), frame_id=frame_id, timestamp=timestamp, chirp=c)
        for i, c in enumerate(keep)
    ]


def frame_tensor(chirp_frames: Sequence[RFFrame], n: int) -> np.ndarray:
    """(C_RF, n, H, W) float32 tensor of n evenly subsampled chirps."""
    if n > len(chirp_frames):
        raise ValidationError(f"frame has {len(chirp_frames)} chirps, {n} requested")
    picked = [chirp_frames[i].image for i in chirp_indices(len(chirp_frames), n)]
    stacked = np.stack(picked, axis=0)
    return np.stack([stacked.real, stacked.imag], axis=0).astype(np.float32)


def snippet_starts(num_frames: int, length: int, stride: int) -> List[int]:
    if stride < 1:
        raise ValidationError(f"snippet stride must be >= 1, got {stride}")
    if length > num_frames:
        raise ValidationError(f"snippet length {length} exceeds the {num_frames} available frames")
    return list(range(0, num_frames - length + 1, stride))


def assemble_snippets(frames: Sequence[Sequence[RFFrame]], T: int, n: int, stride: int) -> List[np.ndarray]:
    """
    Windows of T consecutive frames every ``stride`` frames.

    Returns:
        List of (C_RF, T, n, H, W) float32 tensors, real and imaginary parts as channels
    """
    starts = snippet_starts(len(frames), T, stride)
    tensors = [frame_tensor(f, n) for f in frames]
    return [np.stack(tensors[s:s + T], axis=1) for s in starts]


def ground_truth_records(scene: Iterable[Tuple[int, SceneObject]], cfg: RadarConfig) -> List[ObjectRecord]:
    """Scene objects that land on the grid, as human-source records."""
    records = []
    for frame_id, obj in scene:
        record = ObjectRecord(frame_id, obj.class_id, obj.range, obj.azimuth, 1.0, "human")
        if in_field_of_view(obj, cfg) and in_grid(record.location, cfg):
            records.append(record)
    return records


def generate_scene(cfg: RadarConfig, num_frames: int, seed, min_objects: int = 1, max_objects: int = 4,
                   segment_frames: int = 30, rcs_scale: float = 1.0) -> List[Tuple[int, SceneObject]]:
    """
    Random moving objects, re-drawn every ``segment_frames`` frames.

    Objects move with constant range and azimuth rates and bounce off the
    edges of the usable grid, so every object stays in view.

    Returns:
        (frame_id, SceneObject) pairs ordered by frame
    """
    rng = np.random.default_rng(seed)
    r_lo = 2.0 * cfg.range_resolution + 1.0
    r_hi = cfg.max_range - 2.0 * cfg.range_resolution - 1.0
    sin_edge = 0.8 * (cfg.azimuth_bins // 2 - 1) / (cfg.azimuth_bins * cfg.rx_spacing)
    az_hi = math.asin(min(1.0, sin_edge))
    scene: List[Tuple[int, SceneObject]] = []
    for start in range(0, num_frames, segment_frames):
        count = int(rng.integers(min_objects, max_objects + 1))
        tracks = []
        for _ in range(count):
            class_id = int(rng.integers(0, NUM_CLASSES))
            rcs, extent, speed = CLASS_PROFILES[class_id]
            for _attempt in range(20):
                r = float(rng.uniform(r_lo, r_hi))
                az = float(rng.uniform(-az_hi, az_hi))
                if all(_separation(r, az, t[1], t[2]) > 3.0 for t in tracks):
                    break
            heading = float(rng.uniform(0.0, 2.0 * math.pi))
            v_r = speed * math.cos(heading)
            omega = speed * math.sin(heading) / max(r, 1.0)
            tracks.append([class_id, r, az, v_r, omega, rcs * rcs_scale * float(rng.uniform(0.8, 1.2)), extent])
        for frame_id in range(start, min(start + segment_frames, num_frames)):
            for track in tracks:
                class_id, r, az, v_r, omega, rcs, extent = track
                scene.append((frame_id, SceneObject(class_id, r, az, v_r, rcs, extent)))
                r += v_r / cfg.frame_rate
                az += omega / cfg.frame_rate
                if not r_lo <= r <= r_hi:
                    v_r = -v_r
                    r = min(max(r, r_lo), r_hi)
                if abs(az) > az_hi:
                    omega = -omega
                    az = max(-az_hi, min(az, az_hi))
                track[1:5] = [r, az, v_r, omega]
    return scene


def _separation(r1: float, az1: float, r2: float, az2: float) -> float:
    return math.hypot(r1 * math.sin(az1) - r2 * math.sin(az2), r1 * math.cos(az1) - r2 * math.cos(az2))
