"""Self-supervised training data: pseudo views around each real camera.

For every real camera, pairs of pseudo poses are sampled to its left and
right, both pseudo views are stitched from the same-frame rig images, and
one record is emitted that pairs them with the real image as supervision.
"""

from __future__ import annotations

import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DataIOError, UnsupportedPoseError, ViewStitchError
from .fileio import atomic_write_text, content_hash, write_image
from .geometry import CameraModel, RotationAngles, pose_from_angles, relative_pose
from .pipeline import FavsConfig, FeatureStore, favs_synthesize

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "viewstitch-training-manifest"
MANIFEST_VERSION = 1
# schedule constants handed to the external denoiser trainer untouched
TRAINER_PASSTHROUGH = {
    "learning_rate": 1e-4,
    "lr_schedule": "cosine_annealing",
    "batch_size": 8,
    "train_timesteps": 1000,
    "inference_steps": 50,
    "guidance_scale": 7.5,
}


@dataclass(frozen=True)
class PoseSamplingConfig:
    k_per_side: int = 2
    yaw_offset_range: tuple[float, float] = (5.0, 35.0)  # degrees, magnitude
    elevation_jitter: float = 0.0  # degrees, half-width of a uniform draw
    seed: int = 0

    def __post_init__(self):
        lo, hi = (float(v) for v in self.yaw_offset_range)
        object.__setattr__(self, "yaw_offset_range", (lo, hi))
        if self.k_per_side < 1:
            raise ValueError("k_per_side must be at least 1")
        if not 0 < lo <= hi:
            raise ValueError("yaw_offset_range must satisfy 0 < min <= max")
        if self.elevation_jitter < 0:
            raise ValueError("elevation_jitter must be nonnegative")


@dataclass(frozen=True)
class PseudoPose:
    camera: CameraModel
    yaw_offset_deg: float
    pitch_offset_deg: float


def pose_rng(seed: int, camera_name: str, frame_id: int) -> np.random.Generator:
    """Independent stream per (seed, camera, frame), stable across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(camera_name.encode()), frame_id]))


def sample_pseudo_poses(
    cam: CameraModel, cfg: PoseSamplingConfig, frame_id: int = 0
) -> tuple[list[PseudoPose], list[PseudoPose]]:
    """``k_per_side`` poses turned left (negative yaw) and right of ``cam``.

    The camera centre is kept; only azimuth and elevation change.
    """
    rng = pose_rng(cfg.seed, cam.name, frame_id)
    lo, hi = cfg.yaw_offset_range
    base = cam.angles
    left, right = [], []
    for k in range(cfg.k_per_side):
        for side, sign, out in (("L", -1.0, left), ("R", 1.0, right)):
            yaw = sign * rng.uniform(lo, hi)
            pitch = rng.uniform(-cfg.elevation_jitter, cfg.elevation_jitter) if cfg.elevation_jitter else 0.0
            a = RotationAngles(base.theta + np.deg2rad(yaw), base.phi + np.deg2rad(pitch))
            pseudo = cam.with_pose(pose_from_angles(a, cam.pose.translation), name=f"{cam.name}_{side}{k}")
            out.append(PseudoPose(pseudo, float(yaw), float(pitch)))
    return left, right


def pose_dict(cam: CameraModel) -> dict:
    a = cam.angles
    return {
        "name": cam.name,
        "theta_deg": float(np.rad2deg(a.theta)),
        "phi_deg": float(np.rad2deg(a.phi)),
        "translation": [float(v) for v in cam.pose.translation],
        "f": float(cam.intrinsics.f),
        "cx": float(cam.intrinsics.cx),
        "cy": float(cam.intrinsics.cy),
        "width": int(cam.width),
        "height": int(cam.height),
    }


def pose_conditioning(target: CameraModel, pseudo: CameraModel) -> list[float]:
    """Relative pose target <- pseudo as ``[tx, ty, tz, rx, ry, rz]`` (rotation vector, radians)."""
    r, t = relative_pose(pseudo.pose, target.pose)
    return [float(v) for v in np.concatenate([t, Rotation.from_matrix(r).as_rotvec()])]


@dataclass
class TrainingRecord:
    target_image_path: str
    target_pose: dict
    left_pseudo_image_path: str
    right_pseudo_image_path: str
    left_pose: dict
    right_pose: dict
    left_yaw_offset_deg: float
    right_yaw_offset_deg: float
    pose_conditioning: dict
    provenance: dict

    def __post_init__(self):
        if not self.left_yaw_offset_deg < 0 < self.right_yaw_offset_deg:
            raise ValueError("pseudo poses must straddle the target yaw")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False, ensure_ascii=True, separators=(",", ":"))


@dataclass
class FrameInput:
    cameras: list[CameraModel]
    images: dict[str, np.ndarray]
    scene_id: str = "scene"
    frame_id: int = 0


@dataclass
class DatagenResult:
    records: list[TrainingRecord] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)


def build_training_records(
    frame: FrameInput,
    cfg: PoseSamplingConfig,
    out_dir: str | os.PathLike,
    favs_config: FavsConfig = FavsConfig(),
    store: FeatureStore | None = None,
) -> DatagenResult:
    """Stitch both pseudo views of every sampled pose pair and emit records.

    Images go under ``out_dir``; record paths are relative to it. A pose
    pair whose stitching fails is skipped and logged, so the record count
    is at most ``len(cameras) * k_per_side``.
    """
    out = Path(out_dir)
    store = store or FeatureStore()
    result = DatagenResult()
    stem = f"{frame.scene_id}_{frame.frame_id:06d}"
    missing = [c.name for c in frame.cameras if c.name not in frame.images]
    if missing:
        raise DataIOError(f"frame {stem} has no image for camera {', '.join(missing)}")
    for cam in frame.cameras:
        target_rel = f"targets/{stem}_{cam.name}.png"
        target_written = False
        left, right = sample_pseudo_poses(cam, cfg, frame.frame_id)
        for k, (lp, rp) in enumerate(zip(left, right)):
            try:
                views = [favs_synthesize(frame.cameras, frame.images, p.camera, favs_config, store) for p in (lp, rp)]
            except UnsupportedPoseError as exc:
                logger.warning("skipping %s sample %d: %s", cam.name, k, exc)
                result.skipped.append({"camera": cam.name, "sample_index": k, "reason": str(exc)})
                continue
            if not target_written:
                write_image(out / target_rel, frame.images[cam.name])
                target_written = True
            paths = []
            for p, v in zip((lp, rp), views):
                rel = f"pseudo/{stem}_{p.camera.name}.png"
                write_image(out / rel, v.image)
                paths.append(rel)
            result.records.append(
                TrainingRecord(
                    target_image_path=target_rel,
                    target_pose=pose_dict(cam),
                    left_pseudo_image_path=paths[0],
                    right_pseudo_image_path=paths[1],
                    left_pose=pose_dict(lp.camera),
                    right_pose=pose_dict(rp.camera),
                    left_yaw_offset_deg=lp.yaw_offset_deg,
                    right_yaw_offset_deg=rp.yaw_offset_deg,
                    pose_conditioning={
                        "left": pose_conditioning(cam, lp.camera),
                        "right": pose_conditioning(cam, rp.camera),
                    },
                    provenance={
                        "scene_id": frame.scene_id,
                        "frame_id": frame.frame_id,
                        "sample_index": k,
                        "seed": cfg.seed,
                    },
                )
            )
    return result


def manifest_header(cfg: PoseSamplingConfig, favs_config: FavsConfig) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "sampling": asdict(cfg),
        "favs_config_hash": content_hash(favs_config),
        "trainer": TRAINER_PASSTHROUGH,
    }


def write_manifest(records: Sequence[TrainingRecord], path: str | os.PathLike, header: dict | None = None) -> None:
    """One JSON object per line: an optional header line, then one line per record."""
    if not records:
        raise ViewStitchError(f"{path}: refusing to write an empty manifest")
    lines = []
    if header is not None:
        lines.append(json.dumps({"header": header}, sort_keys=False, ensure_ascii=True, separators=(",", ":")))
    lines.extend(r.to_json() for r in records)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path: str | os.PathLike) -> tuple[dict | None, list[TrainingRecord]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc
    header, records = None, []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if "header" in obj and len(obj) == 1:
                header = obj["header"]
            else:
                records.append(TrainingRecord(**obj))
        except (ValueError, TypeError) as exc:
            raise DataIOError(f"{path}:{lineno}: malformed manifest line ({exc})") from exc
    return header, records
