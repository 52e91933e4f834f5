"""
On-disk formats.

Binary: RFD1 radar tensors and RODW checkpoints, both little-endian with a
magic and a u32 version. Text: whitespace-separated scene, camera and
annotation lines with '#' comments; writers put a ``# config_hash=...``
header first and format floats with six decimals so reruns are
byte-identical. See docs/FILE_FORMATS.md.
"""
import logging
import os
import re
import struct
from collections import OrderedDict
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from models import (
    NUM_CLASSES,
    SOURCES,
    CameraBEV,
    CameraDetection,
    FormatError,
    ObjectRecord,
    SceneObject,
)

logger = logging.getLogger(__name__)

RFD_MAGIC = b"RFD1"
RFD_VERSION = 1
RODW_MAGIC = b"RODW"
RODW_VERSION = 1

RF_SUBDIR = "rf"
_FRAME_FILE = re.compile(r"^frame_(\d{6})\.rfd$")

T = TypeVar("T")


def write_rfd(path: str, tensor: np.ndarray) -> None:
    """Write a (C, T, n, H, W) tensor as RFD1."""
    if tensor.ndim != 5:
        raise FormatError(f"RFD1 stores 5-D (C, T, n, H, W) tensors, got shape {tensor.shape}")
    payload = np.ascontiguousarray(tensor, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI5I", RFD_MAGIC, RFD_VERSION, *tensor.shape))
        f.write(payload.tobytes())


def read_rfd(path: str) -> np.ndarray:
    """Read an RFD1 file into a float32 (C, T, n, H, W) array."""
    with open(path, "rb") as f:
        data = f.read()
    header = struct.calcsize("<4sI5I")
    if len(data) < header:
        raise FormatError(f"{path}: truncated RFD1 header")
    magic, version, *dims = struct.unpack_from("<4sI5I", data)
    if magic != RFD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {RFD_MAGIC!r}")
    if version != RFD_VERSION:
        raise FormatError(f"{path}: unsupported RFD1 version {version}")
    expected = int(np.prod(dims)) * 4
    if len(data) - header != expected:
        raise FormatError(f"{path}: payload is {len(data) - header} bytes, dims {tuple(dims)} need {expected}")
    return np.frombuffer(data, dtype="<f4", offset=header).reshape(dims).astype(np.float32)


def rf_frame_path(run_dir: str, frame_id: int) -> str:
    return os.path.join(run_dir, RF_SUBDIR, f"frame_{frame_id:06d}.rfd")


def list_rf_frames(run_dir: str) -> List[int]:
    """Frame ids present under ``run_dir/rf``, ascending."""
    directory = os.path.join(run_dir, RF_SUBDIR)
    if not os.path.isdir(directory):
        raise FormatError(f"no RF frames directory at {directory}")
    ids = []
    for name in os.listdir(directory):
        match = _FRAME_FILE.match(name)
        if match:
            ids.append(int(match.group(1)))
    return sorted(ids)


def read_frame_tensor(run_dir: str, frame_id: int) -> np.ndarray:
    """(C_RF, n, H, W) tensor of one stored frame."""
    tensor = read_rfd(rf_frame_path(run_dir, frame_id))
    if tensor.shape[1] != 1:
        raise FormatError(f"frame {frame_id}: expected a single-frame RFD1 file, got T={tensor.shape[1]}")
    return tensor[:, 0]


def write_checkpoint(path: str, tensors: "OrderedDict[str, np.ndarray]") -> None:
    """Write named tensors as RODW, in the given order."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", RODW_MAGIC, RODW_VERSION))
        for name, value in tensors.items():
            encoded = name.encode("utf-8")
            array = np.ascontiguousarray(value, dtype="<f4")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(array.tobytes())


def read_checkpoint(path: str) -> "OrderedDict[str, np.ndarray]":
    """Read every tensor of a RODW file, keeping file order."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise FormatError(f"{path}: truncated RODW header")
    magic, version = struct.unpack_from("<4sI", data)
    if magic != RODW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {RODW_MAGIC!r}")
    if version != RODW_VERSION:
        raise FormatError(f"{path}: unsupported RODW version {version}")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    offset = 8
    try:
        while offset < len(data):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if offset + 4 * count > len(data):
                raise FormatError(f"{path}: tensor {name!r} runs past the end of the file")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)
            offset += 4 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt RODW record at byte {offset}: {exc}") from None
    return tensors


def _read_records(path: str, fields: int, convert: Callable[[List[str]], T]) -> List[T]:
    """Parse non-comment lines of ``fields`` whitespace-separated values."""
    if not os.path.exists(path):
        raise FormatError(f"file not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != fields:
                raise FormatError(f"{path}:{line_no}: expected {fields} fields, got {len(parts)}")
            try:
                records.append(convert(parts))
            except (ValueError, FormatError) as exc:
                raise FormatError(f"{path}:{line_no}: {exc}") from None
    return records


def _write_lines(path: str, header: Dict[str, str], rows: Iterable[str]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for key, value in header.items():
            f.write(f"# {key}={value}\n")
        for row in rows:
            f.write(row + "\n")
            count += 1
    return count


def _class_id(text: str, allow_classless: bool = False) -> int:
    value = int(text)
    if allow_classless and value == -1:
        return value
    if not 0 <= value < NUM_CLASSES:
        raise FormatError(f"class id {value} outside 0..{NUM_CLASSES - 1}")
    return value


def _scene_line(parts: List[str]) -> Tuple[int, SceneObject]:
    frame_id = int(parts[0])
    obj = SceneObject(_class_id(parts[1]), *(float(p) for p in parts[2:]))
    if obj.range < 0:
        raise FormatError(f"negative range {obj.range}")
    return frame_id, obj


def read_scene(path: str) -> List[Tuple[int, SceneObject]]:
    """``frame_id class_id range_m azimuth_rad velocity rcs extent`` per line."""
    return _read_records(path, 7, _scene_line)


def write_scene(path: str, scene: Sequence[Tuple[int, SceneObject]], header: Dict[str, str]) -> int:
    rows = (
        f"{fid} {o.class_id} {o.range:.6f} {o.azimuth:.6f} {o.radial_velocity:.6f} {o.rcs:.6f} {o.extent:.6f}"
        for fid, o in scene
    )
    return _write_lines(path, header, rows)


def _camera_line(parts: List[str]) -> CameraDetection:
    x, z, depth, conf = (float(p) for p in parts[2:])
    if depth <= 0:
        raise FormatError(f"depth must be positive, got {depth}")
    if not 0.0 < conf <= 1.0:
        raise FormatError(f"depth confidence must lie in (0, 1], got {conf}")
    return CameraDetection(int(parts[0]), _class_id(parts[1]), CameraBEV(x, z), depth, conf)


def read_camera(path: str) -> List[CameraDetection]:
    """``frame_id class_id x_bev z_bev depth depth_conf`` per line."""
    return _read_records(path, 6, _camera_line)


def write_camera(path: str, dets: Sequence[CameraDetection], header: Dict[str, str]) -> int:
    rows = (
        f"{d.frame_id} {d.class_id} {d.bev.x:.6f} {d.bev.z:.6f} {d.depth:.6f} {d.depth_confidence:.6f}"
        for d in dets
    )
    return _write_lines(path, header, rows)


def _annotation_line(parts: List[str]) -> ObjectRecord:
    source = parts[5]
    if source not in SOURCES:
        raise FormatError(f"unknown source {source!r}, expected one of {', '.join(SOURCES)}")
    confidence = float(parts[4])
    if not 0.0 <= confidence <= 1.0:
        raise FormatError(f"confidence {confidence} outside [0, 1]")
    class_id = _class_id(parts[1], allow_classless=source == "cfar")
    return ObjectRecord(int(parts[0]), class_id, float(parts[2]), float(parts[3]), confidence, source)


def read_annotations(path: str, source: Optional[str] = None) -> List[ObjectRecord]:
    """
    ``frame_id class_id range_m azimuth_rad confidence source`` per line.

    Args:
        path: Annotation, detection or ground-truth file
        source: When given, every record must carry this source tag
    """
    records = _read_records(path, 6, _annotation_line)
    if source is not None:
        wrong = [r for r in records if r.source != source]
        if wrong:
            raise FormatError(f"{path}: {len(wrong)} record(s) are not source={source}")
    return records


def write_annotations(path: str, records: Sequence[ObjectRecord], header: Dict[str, str]) -> int:
    """Write records in (frame, confidence-descending) order."""
    ordered = sorted(records, key=lambda r: (r.frame_id,) + r.sort_key())
    rows = (
        f"{r.frame_id} {r.class_id} {r.range:.6f} {r.azimuth:.6f} {r.confidence:.6f} {r.source}"
        for r in ordered
    )
    return _write_lines(path, header, rows)


def read_header(path: str) -> Dict[str, str]:
    """``# key=value`` lines at the top of a text output."""
    header = {}
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            if not raw.startswith("# ") or "=" not in raw:
                break
            key, value = raw[2:].strip().split("=", 1)
            header[key] = value
    return header
