"""
Pipeline configuration: flat ``key=value`` text with dotted namespaces.

Lookup order mirrors the per-file/global fallback of the old exclusion
configs: an explicit path first, then ``rodforge.conf`` in the working
directory, then the built-in defaults.
"""
import hashlib
import logging
import os
from typing import Any, Callable, Dict, Optional, Tuple

from models import (
    SPEED_OF_LIGHT,
    CameraBEV,
    ConfigError,
    FusionParams,
    KappaTable,
    RadarConfig,
)
from nnkernels.rodnet import ModelSpec

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_NAME = "rodforge.conf"


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "auto"
    return str(value)


# key -> (parser, default)
SCHEMA: Dict[str, Tuple[Callable[[str], Any], Any]] = {
    "run.seed": (int, 0),
    "radar.carrier_freq": (float, 77e9),
    "radar.frame_rate": (float, 30.0),
    "radar.chirps_per_frame": (int, 255),
    "radar.samples_per_chirp": (int, 128),
    "radar.num_rx": (int, 8),
    "radar.rx_spacing": (float, 0.5),
    "radar.bandwidth": (_parse_optional_float, None),
    "radar.range_resolution": (float, 0.23),
    "radar.range_bins": (int, 112),
    "radar.azimuth_bins": (int, 121),
    "radar.chirp_period": (float, 2e-5),
    "radar.lpf_window": (int, 4),
    "geometry.origin_x": (float, 0.0),
    "geometry.origin_z": (float, 0.0),
    "kappa.pedestrian": (float, 0.02),
    "kappa.cyclist": (float, 0.03),
    "kappa.car": (float, 0.05),
    "cfar.guard_range": (int, 3),
    "cfar.guard_azimuth": (int, 2),
    "cfar.train_range": (int, 4),
    "cfar.train_azimuth": (int, 4),
    "cfar.scale": (float, 3.0),
    "fusion.scale_pedestrian": (float, 0.08),
    "fusion.scale_cyclist": (float, 0.1),
    "fusion.scale_car": (float, 0.12),
    "fusion.azimuth_error_pedestrian": (float, 0.05),
    "fusion.azimuth_error_cyclist": (float, 0.05),
    "fusion.azimuth_error_car": (float, 0.08),
    "fusion.range_std": (_parse_optional_float, None),
    "fusion.boresight_resolution": (float, 0.13),
    "fusion.annotation_threshold": (float, 0.1),
    "fusion.camera_only_fallback": (_parse_bool, False),
    "camera.range_bias": (float, 0.02),
    "camera.range_noise": (float, 1.0),
    "camera.azimuth_noise": (float, 0.03),
    "camera.dropout": (float, 0.05),
    "camera.spurious_rate": (float, 0.05),
    "camera.fov_deg": (float, 180.0),
    "camera.confidence_min": (float, 0.6),
    "scene.frames": (int, 2200),
    "scene.min_objects": (int, 1),
    "scene.max_objects": (int, 4),
    "scene.segment_frames": (int, 30),
    "scene.noise_sigma": (float, 1.0),
    "scene.rcs_scale": (float, 1.0),
    "confmap.min_confidence": (float, 0.1),
    "nms.ols_threshold": (float, 0.3),
    "nms.confidence_floor": (float, 0.05),
    "model.backbone": (str, "hourglass"),
    "model.use_mnet": (_parse_bool, True),
    "model.use_tdc": (_parse_bool, True),
    "model.use_inception": (_parse_bool, True),
    "model.snippet_length": (int, 16),
    "model.chirps": (int, 8),
    "model.channel_divisor": (int, 4),
    "model.mnet_kernel": (int, 3),
    "model.stem_kernel": (_parse_int_tuple, (5, 3, 3)),
    "model.encoder_kernel": (_parse_int_tuple, (9, 5, 5)),
    "model.decoder_kernel": (_parse_int_tuple, (4, 6, 6)),
    "model.final_decoder_kernel": (_parse_int_tuple, (3, 6, 6)),
    "model.head_kernel": (_parse_int_tuple, (9, 5, 5)),
    "model.inception_lengths": (_parse_int_tuple, (5, 9, 13)),
    "model.inception_channels": (int, 160),
    "model.tdc_kink_gradient": (str, "zero"),
    "model.float64": (_parse_bool, False),
    "train.lr": (float, 1e-3),
    "train.epochs": (int, 1),
    "train.reduction": (str, "sum"),
    "train.snippet_stride": (int, 4),
    "infer.stride": (int, 4),
    "split.train_frames": (int, 2000),
    "eval.localization_ols": (float, 0.1),
    "paths.run_dir": (str, "run"),
}

CHOICES = {
    "model.backbone": ("hourglass", "vanilla"),
    "model.tdc_kink_gradient": ("zero", "one_sided"),
    "train.reduction": ("sum", "mean"),
}


class PipelineConfig:
    """
    Validated pipeline configuration.

    Values are looked up by dotted key (``cfg["train.lr"]``); typed views of
    the radar, kappa and fusion sections are built on demand.
    """

    def __init__(self, overrides: Optional[Dict[str, Any]] = None, source: str = "<defaults>"):
        self.values: Dict[str, Any] = {key: default for key, (_, default) in SCHEMA.items()}
        self.explicit = set()
        self.source = source
        for key, value in (overrides or {}).items():
            self.set(key, value)
        self.validate()

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "PipelineConfig":
        """Parse ``key=value`` lines; '#' starts a comment."""
        cfg = cls.__new__(cls)
        cfg.values = {key: default for key, (_, default) in SCHEMA.items()}
        cfg.explicit = set()
        cfg.source = source
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{line_no}: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Optional[str] = None) -> "PipelineConfig":
        """
        Load configuration following the lookup chain.

        Args:
            path: Explicit config path (must exist when given)

        Returns:
            PipelineConfig
        """
        if path is None and os.path.exists(DEFAULT_CONFIG_NAME):
            path = DEFAULT_CONFIG_NAME
        if path is None:
            logger.info("No config file found, using built-in defaults")
            return cls()
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        logger.info("Loaded config from %s", path)
        return cls.from_text(text, source=path)

    def set(self, key: str, value: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{key} must be one of {', '.join(CHOICES[key])}, got {value!r}")
        self.values[key] = value
        self.explicit.add(key)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def validate(self) -> None:
        """Cross-key checks that a single value parser cannot make."""
        bandwidth = self.values["radar.bandwidth"]
        resolution = self.values["radar.range_resolution"]
        if resolution <= 0:
            raise ConfigError("radar.range_resolution must be positive")
        if bandwidth is not None and "radar.range_resolution" in self.explicit:
            derived = SPEED_OF_LIGHT / (2.0 * bandwidth)
            if abs(derived - resolution) > 1e-6 * resolution:
                raise ConfigError(
                    f"radar.bandwidth implies a range resolution of {derived:.6f} m "
                    f"but radar.range_resolution is {resolution}"
                )
        if self.values["run.seed"] < 0:
            raise ConfigError("run.seed must be non-negative")
        self.radar().validate()
        if min(self.values[k] for k in ("kappa.pedestrian", "kappa.cyclist", "kappa.car")) <= 0:
            raise ConfigError("kappa values must be positive")
        if self.values["model.backbone"] == "vanilla" and self.values["model.use_inception"]:
            raise ConfigError("model.use_inception requires model.backbone=hourglass")
        for key in ("model.snippet_length", "model.chirps", "model.channel_divisor",
                    "train.epochs", "train.snippet_stride", "infer.stride"):
            if self.values[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.values["model.chirps"] > self.values["radar.chirps_per_frame"]:
            raise ConfigError("model.chirps cannot exceed radar.chirps_per_frame")
        if not 0.0 < self.values["fusion.annotation_threshold"] < 1.0:
            raise ConfigError("fusion.annotation_threshold must lie in (0, 1)")
        if self.values["scene.min_objects"] > self.values["scene.max_objects"]:
            raise ConfigError("scene.min_objects exceeds scene.max_objects")
        self.model_spec()

    def radar(self) -> RadarConfig:
        v = self.values
        bandwidth = v["radar.bandwidth"]
        if bandwidth is None:
            bandwidth = SPEED_OF_LIGHT / (2.0 * v["radar.range_resolution"])
        return RadarConfig(
            carrier_freq=v["radar.carrier_freq"],
            frame_rate=v["radar.frame_rate"],
            chirps_per_frame=v["radar.chirps_per_frame"],
            samples_per_chirp=v["radar.samples_per_chirp"],
            num_rx=v["radar.num_rx"],
            rx_spacing=v["radar.rx_spacing"],
            bandwidth=bandwidth,
            range_bins=v["radar.range_bins"],
            azimuth_bins=v["radar.azimuth_bins"],
            chirp_period=v["radar.chirp_period"],
            lpf_window=v["radar.lpf_window"],
        )

    def kappa(self) -> KappaTable:
        v = self.values
        return KappaTable(v["kappa.pedestrian"], v["kappa.cyclist"], v["kappa.car"])

    def fusion(self) -> FusionParams:
        v = self.values
        range_std = v["fusion.range_std"]
        if range_std is None:
            range_std = self.radar().range_resolution
        return FusionParams(
            scale=(v["fusion.scale_pedestrian"], v["fusion.scale_cyclist"], v["fusion.scale_car"]),
            azimuth_error=(
                v["fusion.azimuth_error_pedestrian"],
                v["fusion.azimuth_error_cyclist"],
                v["fusion.azimuth_error_car"],
            ),
            range_std=range_std,
            boresight_resolution=v["fusion.boresight_resolution"],
            annotation_threshold=v["fusion.annotation_threshold"],
            origin=CameraBEV(v["geometry.origin_x"], v["geometry.origin_z"]),
            camera_only_fallback=v["fusion.camera_only_fallback"],
        )

    def origin(self) -> CameraBEV:
        return CameraBEV(self.values["geometry.origin_x"], self.values["geometry.origin_z"])

    def resolved_text(self) -> str:
        """Every key with its effective value, sorted, one per line."""
        return "".join(f"{key}={_format_value(self.values[key])}\n" for key in sorted(self.values))

    def config_hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode("utf-8")).hexdigest()[:16]

    def write_resolved(self, directory: str) -> str:
        """Write ``config.resolved`` next to the outputs and return its path."""
        path = os.path.join(directory, "config.resolved")
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# config_hash={self.config_hash()}\n")
            f.write(self.resolved_text())
        return path

    def model_spec(self) -> ModelSpec:
        """ModelSpec built from the model.* keys."""
        v = self.values
        spec = ModelSpec(
            backbone=v["model.backbone"],
            use_mnet=v["model.use_mnet"],
            use_tdc=v["model.use_tdc"],
            use_inception=v["model.use_inception"],
            snippet_length=v["model.snippet_length"],
            chirps=v["model.chirps"],
            channel_divisor=v["model.channel_divisor"],
            mnet_kernel=v["model.mnet_kernel"],
            stem_kernel=v["model.stem_kernel"],
            encoder_kernel=v["model.encoder_kernel"],
            decoder_kernel=v["model.decoder_kernel"],
            final_decoder_kernel=v["model.final_decoder_kernel"],
            head_kernel=v["model.head_kernel"],
            inception_lengths=v["model.inception_lengths"],
            inception_channels=v["model.inception_channels"],
            tdc_kink_gradient=v["model.tdc_kink_gradient"],
            float64=v["model.float64"],
        )
        spec.validate()
        return spec
