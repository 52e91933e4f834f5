"""
Radar Object Detection Pipeline

Simulates FMCW radar frames, auto-labels them with the camera-radar fusion
teacher, trains the RODNet-lite student on RF snippets, runs sliding-window
inference and scores detections with OLS-based AP/AR.
"""
import argparse
import logging
import os
import sys
import time
from collections import OrderedDict
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import PipelineConfig
from confmap import OverlapAccumulator, confmap_from_annotations, l_nms
from dataset_io import (
    RF_SUBDIR,
    list_rf_frames,
    read_annotations,
    read_camera,
    read_checkpoint,
    read_frame_tensor,
    read_scene,
    rf_frame_path,
    write_annotations,
    write_camera,
    write_checkpoint,
    write_rfd,
    write_scene,
)
from evaluation import evaluate, localization_errors, pooled_localization
from models import NUM_CLASSES, ConfMapSet, FormatError, ObjectRecord, RodforgeError, ValidationError
from nnkernels import ModelSpec, RodnetModel, TrainConfig, sgd_train
from output_formatter import (
    export_to_file,
    format_eval_table,
    format_key_values,
    format_localization_table,
    format_metric,
    print_annotation_summary,
    print_eval_summary,
)
from radar_signal import (
    C_RF,
    chirp_indices,
    frame_tensor,
    generate_scene,
    ground_truth_records,
    rf_image_from_raw,
    simulate_frame,
    snippet_starts,
)
from teacher import annotate_frame, camera_only_annotations, degrade_camera

logger = logging.getLogger("rodforge")

SCENE_FILE = "scene.txt"
GT_FILE = "gt.txt"
CAMERA_FILE = "camera.txt"
ANNOTATION_FILES = {"crf": "annotations.txt", "co": "annotations_co.txt"}
CHECKPOINT_FILE = "model.rodw"
LOSS_FILE = "loss_history.tsv"
DETECTIONS_FILE = "detections.txt"
EVAL_FILE = "eval.tsv"


def banner(title: str) -> None:
    print("\n" + "=" * 80)
    print(title)
    print("=" * 80)


def output_header(cfg: PipelineConfig) -> Dict[str, str]:
    return {"config_hash": cfg.config_hash()}


class SnippetDataset:
    """
    Training pairs built lazily from stored frames.

    Item ``i`` is the snippet starting at ``starts[i]`` and its ConfMap
    target; frames are read from disk once and cached.
    """

    def __init__(self, run_dir: str, frame_ids: Sequence[int], annotations: Sequence[ObjectRecord],
                 cfg: PipelineConfig, spec: ModelSpec, stride: int):
        self.run_dir = run_dir
        self.frame_ids = list(frame_ids)
        self.spec = spec
        self.radar = cfg.radar()
        self.kappa = cfg.kappa()
        self.min_confidence = cfg["confmap.min_confidence"]
        self.starts = snippet_starts(len(self.frame_ids), spec.snippet_length, stride)
        self.by_frame: Dict[int, List[ObjectRecord]] = {}
        for ann in annotations:
            self.by_frame.setdefault(ann.frame_id, []).append(ann)
        self._frame = lru_cache(maxsize=4 * spec.snippet_length)(self._load_frame)

    def _load_frame(self, frame_id: int) -> np.ndarray:
        tensor = read_frame_tensor(self.run_dir, frame_id)
        return tensor[:, :self.spec.input_chirps]

    def snippet(self, start: int) -> Tuple[np.ndarray, List[int]]:
        ids = self.frame_ids[start:start + self.spec.snippet_length]
        return np.stack([self._frame(fid) for fid in ids], axis=1), ids

    def __len__(self) -> int:
        return len(self.starts)

    def __getitem__(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        snippet, ids = self.snippet(self.starts[index])
        anns = [ann for fid in ids for ann in self.by_frame.get(fid, ())]
        target = confmap_from_annotations(anns, self.kappa, self.radar, ids, self.min_confidence)
        return snippet, target.values


def contiguous_frames(run_dir: str) -> List[int]:
    frames = list_rf_frames(run_dir)
    if not frames:
        raise FormatError(f"no RF frames under {os.path.join(run_dir, RF_SUBDIR)}")
    if frames != list(range(frames[0], frames[0] + len(frames))):
        raise FormatError(f"RF frames under {run_dir} are not contiguous")
    return frames


def split_frames(frames: Sequence[int], cfg: PipelineConfig, held_out: bool) -> List[int]:
    """Frames before ``split.train_frames`` train, the rest are held out; falls back to all frames."""
    boundary = cfg["split.train_frames"]
    part = [f for f in frames if (f >= boundary) == held_out]
    if not part:
        logger.warning("No %s frames around split.train_frames=%d, using all %d frames",
                       "held-out" if held_out else "training", boundary, len(frames))
        return list(frames)
    return part


def rf_magnitude(tensor: np.ndarray) -> np.ndarray:
    """Chirp-averaged magnitude of a (C_RF, n, H, W) frame."""
    return np.hypot(tensor[0], tensor[1]).mean(axis=0)


def cmd_simulate(cfg: PipelineConfig, args) -> None:
    run_dir = args.out
    radar = cfg.radar()
    seed = cfg["run.seed"]
    os.makedirs(os.path.join(run_dir, RF_SUBDIR), exist_ok=True)

    if args.scene:
        scene = read_scene(args.scene)
        num_frames = max(fid for fid, _ in scene) + 1 if scene else cfg["scene.frames"]
        print(f"Loaded {len(scene)} scene objects from {args.scene}")
    else:
        num_frames = cfg["scene.frames"]
        scene = generate_scene(radar, num_frames, seed, cfg["scene.min_objects"], cfg["scene.max_objects"],
                               cfg["scene.segment_frames"], cfg["scene.rcs_scale"])
        print(f"Generated {len(scene)} scene objects over {num_frames} frames")

    by_frame: Dict[int, list] = {}
    for fid, obj in scene:
        by_frame.setdefault(fid, []).append(obj)

    n = cfg["model.chirps"]
    chirps = chirp_indices(radar.chirps_per_frame, n)
    skipped = 0
    for frame_id in range(num_frames):
        raw = simulate_frame(by_frame.get(frame_id, []), radar, cfg["scene.noise_sigma"], seed=[seed, frame_id])
        skipped += raw.skipped
        tensor = frame_tensor(rf_image_from_raw(raw, radar, chirps, frame_id), n)
        write_rfd(rf_frame_path(run_dir, frame_id), tensor[:, None])
    if skipped:
        logger.warning("%d scene object(s) were outside the field of view", skipped)

    header = output_header(cfg)
    gts = ground_truth_records(scene, radar)
    camera = degrade_camera(
        gts, radar, cfg.origin(), np.random.default_rng([seed, num_frames]),
        range_bias=cfg["camera.range_bias"], range_noise=cfg["camera.range_noise"],
        azimuth_noise=cfg["camera.azimuth_noise"], dropout=cfg["camera.dropout"],
        spurious_rate=cfg["camera.spurious_rate"], fov_deg=cfg["camera.fov_deg"],
        confidence_min=cfg["camera.confidence_min"],
    )
    write_scene(os.path.join(run_dir, SCENE_FILE), scene, header)
    write_annotations(os.path.join(run_dir, GT_FILE), gts, header)
    write_camera(os.path.join(run_dir, CAMERA_FILE), camera, header)

    print(f"Wrote {num_frames} RF frames to {os.path.join(run_dir, RF_SUBDIR)}")
    print(f"Ground-truth objects on the grid: {len(gts)}")
    print(f"Synthetic camera detections: {len(camera)}")


def cmd_annotate(cfg: PipelineConfig, args) -> None:
    run_dir = args.out
    radar = cfg.radar()
    params = cfg.fusion()
    frames = contiguous_frames(run_dir)
    camera_path = args.camera or os.path.join(run_dir, CAMERA_FILE)
    dets = read_camera(camera_path)

    unknown = sorted({d.frame_id for d in dets} - set(frames))
    if unknown:
        raise ValidationError(
            f"{camera_path}: camera frames {unknown[:5]} have no RF frame under {run_dir} "
            f"({len(unknown)} mismatched frame ids)"
        )
    by_frame: Dict[int, list] = {}
    for det in dets:
        by_frame.setdefault(det.frame_id, []).append(det)

    if args.mode == "co":
        annotations = camera_only_annotations(dets, params, radar)
    else:
        guard = (cfg["cfar.guard_range"], cfg["cfar.guard_azimuth"])
        train = (cfg["cfar.train_range"], cfg["cfar.train_azimuth"])
        annotations = []
        for frame_id in frames:
            frame_dets = by_frame.get(frame_id, [])
            if not frame_dets:
                continue
            mag = rf_magnitude(read_frame_tensor(run_dir, frame_id))
            annotations.extend(annotate_frame(mag, frame_dets, params, radar, guard, train,
                                              cfg["cfar.scale"], frame_id))

    out_path = args.annotations or os.path.join(run_dir, ANNOTATION_FILES[args.mode])
    write_annotations(out_path, annotations, output_header(cfg))
    print_annotation_summary(annotations, len(frames))
    print(f"Annotations written to {out_path}")

    gt_path = args.gt or os.path.join(run_dir, GT_FILE)
    if os.path.exists(gt_path):
        gts = read_annotations(gt_path)
        kappa = cfg.kappa()
        min_ols = cfg["eval.localization_ols"]
        rows = OrderedDict()
        rows["camera"] = localization_errors(camera_only_annotations(dets, params, radar), gts, kappa, min_ols)
        rows[args.mode] = localization_errors(annotations, gts, kappa, min_ols)
        banner("Localization error against ground truth")
        print(format_localization_table(rows))
        for label, stats in rows.items():
            pooled = pooled_localization(stats)
            print(f"{label}: {pooled.count} matched, mean range error {format_metric(pooled.mean_range_error)} m")


def _checkpoint_meta(cfg: PipelineConfig, spec: ModelSpec) -> "OrderedDict[str, np.ndarray]":
    radar = cfg.radar()
    dims = (C_RF, spec.snippet_length, spec.input_chirps, radar.range_bins, radar.azimuth_bins,
            spec.num_classes)
    meta = OrderedDict()
    meta["meta.dims"] = np.asarray(dims, dtype=np.float32)
    meta["meta.flags"] = np.asarray(spec.flags(), dtype=np.float32)
    meta["meta.config_hash"] = np.asarray([ord(ch) for ch in cfg.config_hash()], dtype=np.float32)
    return meta


def load_model(cfg: PipelineConfig, path: str) -> RodnetModel:
    """Rebuild the configured model and load a checkpoint, checking its header tensors."""
    spec = cfg.model_spec()
    tensors = read_checkpoint(path)
    expected = _checkpoint_meta(cfg, spec)
    for key in ("meta.dims", "meta.flags"):
        if key not in tensors:
            raise FormatError(f"{path}: checkpoint has no {key} record")
        stored = tensors[key]
        if stored.shape != expected[key].shape or not np.array_equal(stored, expected[key]):
            raise FormatError(
                f"{path}: {key} {stored.astype(int).tolist()} does not match the configured model "
                f"{expected[key].astype(int).tolist()}"
            )
    model = RodnetModel(spec, seed=cfg["run.seed"])
    model.load_parameters(tensors)
    return model


def cmd_train(cfg: PipelineConfig, args) -> None:
    run_dir = args.out
    spec = cfg.model_spec()
    frames = split_frames(contiguous_frames(run_dir), cfg, held_out=False)
    ann_path = args.annotations or os.path.join(run_dir, ANNOTATION_FILES[args.mode])
    annotations = read_annotations(ann_path)
    dataset = SnippetDataset(run_dir, frames, annotations, cfg, spec, cfg["train.snippet_stride"])
    print(f"Training on {len(dataset)} snippets from {len(frames)} frames ({ann_path})")

    model = RodnetModel(spec, seed=cfg["run.seed"])
    train_cfg = TrainConfig(lr=cfg["train.lr"], epochs=cfg["train.epochs"], seed=cfg["run.seed"],
                            reduction=cfg["train.reduction"])
    result = sgd_train(dataset, model, train_cfg)

    tensors = _checkpoint_meta(cfg, spec)
    tensors.update(result.model.parameters())
    ckpt_path = args.checkpoint or os.path.join(run_dir, CHECKPOINT_FILE)
    write_checkpoint(ckpt_path, tensors)
    loss_lines = ["step\tloss"] + [f"{i}\t{loss:.6f}" for i, loss in enumerate(result.loss_history)]
    export_to_file("\n".join(loss_lines), os.path.join(run_dir, LOSS_FILE), output_header(cfg))
    print(f"Model with {result.model.num_parameters()} parameters written to {ckpt_path}")
    print(f"Loss: initial {result.loss_history[0]:.6f}, final {result.loss_history[-1]:.6f}")


def window_starts(num_frames: int, length: int, stride: int) -> List[int]:
    """Sliding-window starts, plus a last window flush with the end so every frame is covered."""
    starts = snippet_starts(num_frames, length, stride)
    if starts[-1] != num_frames - length:
        starts.append(num_frames - length)
    return starts


def cmd_infer(cfg: PipelineConfig, args) -> None:
    run_dir = args.out
    radar = cfg.radar()
    kappa = cfg.kappa()
    ckpt_path = args.checkpoint or os.path.join(run_dir, CHECKPOINT_FILE)
    model = load_model(cfg, ckpt_path)
    spec = model.spec
    frames = split_frames(contiguous_frames(run_dir), cfg, held_out=True)
    dataset = SnippetDataset(run_dir, frames, [], cfg, spec, stride=1)
    starts = window_starts(len(frames), spec.snippet_length, cfg["infer.stride"])

    accumulator = OverlapAccumulator()
    detections: List[ObjectRecord] = []
    timings = []
    for k, start in enumerate(starts):
        snippet, ids = dataset.snippet(start)
        began = time.perf_counter()
        probs, _ = model.forward(snippet)
        timings.append(time.perf_counter() - began)
        accumulator.add(ConfMapSet(values=probs, frame_ids=ids))
        next_start = starts[k + 1] if k + 1 < len(starts) else len(frames)
        for fid in [f for f in accumulator.frame_ids() if f - frames[0] < next_start]:
            averaged = accumulator.pop_averaged(fid)
            detections.extend(l_nms(averaged, kappa, radar, cfg["nms.ols_threshold"],
                                    cfg["nms.confidence_floor"], frame_id=fid))
        logger.debug("Snippet at frame %d: %.1f ms", frames[start], 1000.0 * timings[-1])

    out_path = args.detections or os.path.join(run_dir, DETECTIONS_FILE)
    write_annotations(out_path, detections, output_header(cfg))
    mean_ms = 1000.0 * float(np.mean(timings))
    logger.info("Inference: %d snippets, %.1f ms per snippet, stride %d", len(starts), mean_ms, cfg["infer.stride"])
    print(f"Inferred {len(frames)} frames with {len(starts)} snippets ({mean_ms:.1f} ms per snippet)")
    print(f"Detections: {len(detections)} written to {out_path}")


def cmd_evaluate(cfg: PipelineConfig, args) -> None:
    run_dir = args.out
    dets = read_annotations(args.detections or os.path.join(run_dir, DETECTIONS_FILE))
    gts = read_annotations(args.gt or os.path.join(run_dir, GT_FILE))
    boundary = cfg["split.train_frames"]
    if any(gt.frame_id >= boundary for gt in gts):
        dets = [d for d in dets if d.frame_id >= boundary]
        gts = [g for g in gts if g.frame_id >= boundary]
    dets = [d for d in dets if 0 <= d.class_id < NUM_CLASSES]
    print(f"Evaluating {len(dets)} detections against {len(gts)} ground-truth objects")

    result = evaluate(dets, gts, cfg.kappa())
    table = format_eval_table(result)
    print(table)
    print()
    print(format_key_values(result))
    print_eval_summary(result)
    os.makedirs(run_dir, exist_ok=True)
    export_to_file(table, os.path.join(run_dir, EVAL_FILE), output_header(cfg))


COMMANDS = {
    "simulate": (cmd_simulate, "Simulate radar frames, ground truth and camera detections"),
    "annotate": (cmd_annotate, "Auto-label frames with the camera-radar fusion teacher"),
    "train": (cmd_train, "Train RODNet-lite on annotated snippets"),
    "infer": (cmd_infer, "Run sliding-window inference on held-out frames"),
    "evaluate": (cmd_evaluate, "Score detections with OLS-based AP/AR"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (default: ./rodforge.conf, else built-in defaults)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", help="run directory (default: paths.run_dir)")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging on stderr")
    common.add_argument("--scene", help="simulate: scene file instead of a random scene")
    common.add_argument("--camera", help="annotate: camera detection file (default: <out>/camera.txt)")
    common.add_argument("--annotations", help="annotate output / train input annotation file")
    common.add_argument("--mode", choices=("crf", "co"), default="crf",
                        help="supervision: camera-radar fusion or camera only (default: crf)")
    common.add_argument("--checkpoint", help="train output / infer input checkpoint")
    common.add_argument("--detections", help="infer output / evaluate input detection file")
    common.add_argument("--gt", help="ground-truth file (default: <out>/gt.txt)")

    parser = argparse.ArgumentParser(
        prog="rodforge",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Typical run:\n"
            "  rodforge simulate --config configs/desk.conf --out run\n"
            "  rodforge annotate --config configs/desk.conf --out run\n"
            "  rodforge train    --config configs/desk.conf --out run\n"
            "  rodforge infer    --config configs/desk.conf --out run\n"
            "  rodforge evaluate --config configs/desk.conf --out run\n"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = PipelineConfig.load(args.config)
        if args.seed is not None:
            cfg.set("run.seed", args.seed)
            cfg.validate()
        args.out = args.out or cfg["paths.run_dir"]
        logger.info("Resolved config (hash %s):\n%s", cfg.config_hash(), cfg.resolved_text().rstrip())

        banner(f"rodforge {args.command}")
        handler, _ = COMMANDS[args.command]
        handler(cfg, args)
        cfg.write_resolved(args.out)
    except ValidationError as exc:
        logger.error("%s", exc)
        return 2
    except (RodforgeError, OSError) as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
