"""End-to-end arbitrary-view stitching from a calibrated multi-camera rig.

For every source camera the pipeline computes a rotation-only homography
into the target view, optionally refines it with feature matches against a
reference source, nudges it with an object-level offset and finally warps
and blends all surviving sources.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .align import (
    ClusterConfig,
    alignment_weights,
    build_clusters,
    compose_aligned_homography,
    dbscan,
    debug_dump,
    solve_alignment_offset,
)
from .errors import (
    DegenerateConfigurationError,
    InsufficientMatchesError,
    NoUsableClustersError,
    ShapeMismatchError,
    UnsupportedPoseError,
)
from .features import (
    KeypointSet,
    RansacConfig,
    SelectionConfig,
    SiftConfig,
    detect_features,
    homography_consistency,
    load_keypoints,
    match_descriptors,
    ransac_homography,
    save_keypoints,
    select_base_homography,
)
from .fusion import FusionConfig, StitchResult, blend, compute_fusion_weights, warp_coverage, warp_perspective
from .geometry import (
    CameraModel,
    Homography,
    Provenance,
    camera_homography,
    check_homography,
    corner_depths,
    project_points,
)

logger = logging.getLogger(__name__)

FALLBACK_QUALITY = 0.5
OVERLAP_TIE = 0.01


@dataclass(frozen=True)
class FavsConfig:
    """Knobs for the whole pipeline.

    ``cluster=None`` rescales the default clustering radius to each source
    frame. ``geometric_only`` skips matching and alignment entirely.
    """

    sift: SiftConfig = SiftConfig()
    ratio: float = 0.75
    ransac: RansacConfig = RansacConfig()
    selection: SelectionConfig = SelectionConfig()
    cluster: ClusterConfig | None = None
    beta: float = 0.5
    fusion: FusionConfig = FusionConfig()
    geometric_only: bool = False
    align_objects: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must lie in (0, 1]")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SourceReport:
    source_id: str
    valid: bool
    reason: str = ""
    provenance: str | None = None
    alpha: float | None = None
    n_matches: int = 0
    n_inliers: int = 0
    consistency_error: float | None = None
    verdict: str | None = None
    delta_t: list[float] | None = None
    n_clusters: int = 0
    quality: float = 0.0
    is_primary: bool = False
    is_reference: bool = False
    overlap: float = 0.0
    weight_sum: float = 0.0
    clusters: dict | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        if d["consistency_error"] is not None and not np.isfinite(d["consistency_error"]):
            d["consistency_error"] = None
        return d


class FeatureStore:
    """Memoised detections keyed by image content and detector settings.

    With a ``directory`` the detections are also persisted as keypoint
    cache files so repeated runs skip detection.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = None if directory is None else Path(directory)
        self._mem: dict[str, tuple[KeypointSet, np.ndarray]] = {}

    @staticmethod
    def key(image: np.ndarray, config: SiftConfig) -> str:
        h = hashlib.sha1()
        h.update(repr(image.shape).encode())
        h.update(np.ascontiguousarray(image).tobytes())
        h.update(repr(config).encode())
        return h.hexdigest()

    def get(self, image: np.ndarray, config: SiftConfig) -> tuple[KeypointSet, np.ndarray]:
        k = self.key(image, config)
        if k in self._mem:
            return self._mem[k]
        path = None if self.directory is None else self.directory / f"{k}.vskp"
        if path is not None and path.exists():
            result = load_keypoints(path)
        else:
            result = detect_features(image, config)
            if path is not None:
                self.directory.mkdir(parents=True, exist_ok=True)
                save_keypoints(path, *result)
                # reload so cold and warm runs see the same float32 descriptors
                result = load_keypoints(path)
        self._mem[k] = result
        return result


def axis_angle(a: CameraModel, b: CameraModel) -> float:
    """Angle in radians between two optical axes."""
    c = float(np.clip(a.pose.optical_axis @ b.pose.optical_axis, -1.0, 1.0))
    return float(np.arccos(c))


def select_primary(cameras: Sequence[CameraModel], target: CameraModel, candidates: Sequence[int]) -> int:
    """An explicitly flagged camera wins; otherwise the smallest axis angle (lowest index on ties)."""
    flagged = [i for i in candidates if cameras[i].primary]
    if len(flagged) == 1:
        return flagged[0]
    angles = [axis_angle(cameras[i], target) for i in candidates]
    return candidates[int(np.argmin(angles))]


def geometric_stage(src: CameraModel, target: CameraModel) -> tuple[Homography | None, str]:
    """Rotation-only homography into the target, or ``None`` with a reason."""
    depths = corner_depths(src, target)
    if np.any(depths <= 0):
        return None, "source frame reaches behind the target camera"
    h = camera_homography(src, target)
    rep = check_homography(h, src.width, src.height)
    if not rep.valid:
        return None, rep.reason
    return h, ""


def _images_by_name(cameras: Sequence[CameraModel], images) -> list[np.ndarray]:
    if isinstance(images, Mapping):
        missing = [c.name for c in cameras if c.name not in images]
        if missing:
            raise ShapeMismatchError(f"no image for camera {', '.join(missing)}")
        out = [np.asarray(images[c.name]) for c in cameras]
    else:
        out = [np.asarray(im) for im in images]
        if len(out) != len(cameras):
            raise ShapeMismatchError("one image per camera is required")
    for c, im in zip(cameras, out):
        if im.shape[:2] != (c.height, c.width):
            raise ShapeMismatchError(
                f"image for {c.name} is {im.shape[1]}x{im.shape[0]}, camera expects {c.width}x{c.height}"
            )
    return out


def _pick_reference(overlaps: dict[int, float], primary: int) -> int:
    best = max(overlaps.values())
    tied = [i for i, v in overlaps.items() if v >= best * (1.0 - OVERLAP_TIE)]
    return primary if primary in tied else min(tied)


def _refine(
    i: int,
    ref: int,
    cams: Sequence[CameraModel],
    imgs: Sequence[np.ndarray],
    target: CameraModel,
    h_geom: Homography,
    h_ref_target: Homography,
    config: FavsConfig,
    store: FeatureStore,
    report: SourceReport,
) -> Homography:
    """Feature refinement and object alignment for one non-reference source."""
    src = cams[i]
    kp_i, d_i = store.get(imgs[i], config.sift)
    kp_r, d_r = store.get(imgs[ref], config.sift)
    report.quality = FALLBACK_QUALITY
    if len(kp_i) == 0 or len(kp_r) < 2:
        report.reason = "no features"
        report.provenance, report.alpha = Provenance.GEOMETRIC.value, 1.0
        return h_geom
    ms = match_descriptors(d_i, d_r, config.ratio)
    report.n_matches = len(ms)
    src_xy = kp_i.xy[ms.src_idx]
    # reference keypoints expressed in target pixels through the reference's own homography
    ref_xy, ok = project_points(h_ref_target, kp_r.xy[ms.ref_idx])
    h_feat, inliers = None, None
    if len(ms) >= max(4, config.selection.min_matches):
        try:
            seeded = RansacConfig(**{**asdict(config.ransac), "seed": config.ransac.seed + config.seed + i})
            h_ir, inliers = ransac_homography(src_xy, kp_r.xy[ms.ref_idx], seeded)
            h_feat = Homography((h_ref_target @ h_ir).m, Provenance.FEATURE)
            report.n_inliers = int(inliers.sum())
        except (InsufficientMatchesError, DegenerateConfigurationError) as exc:
            report.reason = str(exc)
    score = None
    if h_feat is not None:
        score = homography_consistency(h_geom, h_feat, src.width, src.height, config.selection)
        report.consistency_error = score.mean_corner_error
        report.verdict = score.verdict.value
    h_base, alpha = select_base_homography(
        h_geom, h_feat, len(ms), score, (src.width, src.height), config.selection
    )
    report.alpha = alpha
    report.provenance = h_base.provenance.value
    if h_base.provenance is not Provenance.GEOMETRIC:
        report.quality = FALLBACK_QUALITY + (1.0 - FALLBACK_QUALITY) * report.n_inliers / max(len(ms), 1)
    if h_feat is None or not config.align_objects:
        return h_base

    ccfg = config.cluster or ClusterConfig().scaled_to(src.width, src.height)
    usable = ok
    labels = np.full(len(ms), -1)
    labels[usable] = dbscan(src_xy[usable], ccfg)
    clusters = build_clusters(src_xy, ref_xy, labels, ccfg, inliers & usable)
    weights = alignment_weights(clusters)
    report.n_clusters = len(clusters)
    try:
        delta = solve_alignment_offset(clusters, weights, h_base)
    except NoUsableClustersError as exc:
        logger.debug("%s: %s; skipping alignment", src.name, exc)
        report.clusters = debug_dump(clusters, weights, None)
        return h_base
    report.delta_t = [float(v) for v in delta]
    report.clusters = debug_dump(clusters, weights, delta)
    h_aligned = compose_aligned_homography(h_base, delta, config.beta)
    if not check_homography(h_aligned, src.width, src.height).valid:
        logger.debug("%s: aligned homography invalid; keeping base", src.name)
        return h_base
    report.provenance = Provenance.ALIGNED.value
    return h_aligned


def favs_synthesize(
    cameras: Sequence[CameraModel],
    images: Mapping[str, np.ndarray] | Sequence[np.ndarray],
    target: CameraModel,
    config: FavsConfig = FavsConfig(),
    store: FeatureStore | None = None,
) -> StitchResult:
    """Synthesise the view of ``target`` from the rig images.

    Sources whose frame is not representable in the target (facing away or
    failing the homography validity check) are dropped. The remaining
    sources are refined against the reference source, the valid one with
    the largest warped overlap in the target, then blended.

    Raises:
        UnsupportedPoseError: if no source survives the validity checks.
    """
    if not cameras:
        raise UnsupportedPoseError("target pose unsupported: no source cameras")
    cams = list(cameras)
    imgs = _images_by_name(cams, images)
    store = store or FeatureStore()
    reports = [SourceReport(c.name, False) for c in cams]
    h_geom: dict[int, Homography] = {}
    for i, c in enumerate(cams):
        h, reason = geometric_stage(c, target)
        if h is None:
            reports[i].reason = reason
            continue
        h_geom[i] = h
        reports[i].valid = True
        reports[i].overlap = float(warp_coverage(h, c.width, c.height, target.width, target.height).mean())
    valid = [i for i in h_geom if reports[i].overlap > 0]
    for i in set(h_geom) - set(valid):
        reports[i].valid = False
        reports[i].reason = "no overlap with the target frame"
    if not valid:
        raise UnsupportedPoseError("target pose unsupported")

    primary = select_primary(cams, target, valid)
    reports[primary].is_primary = True
    ref = _pick_reference({i: reports[i].overlap for i in valid}, primary)
    reports[ref].is_reference = True

    h_final: dict[int, Homography] = {}
    for i in valid:
        rep = reports[i]
        if config.geometric_only or i == ref:
            h_final[i] = h_geom[i]
            rep.provenance, rep.alpha, rep.quality = Provenance.GEOMETRIC.value, 1.0, 1.0
            continue
        h_final[i] = _refine(i, ref, cams, imgs, target, h_geom[i], h_geom[ref], config, store, rep)

    views = []
    for i in valid:
        v = warp_perspective(imgs[i], h_final[i], target.width, target.height, cams[i].name)
        v.quality = reports[i].quality
        v.is_primary = i == primary
        views.append(v)
    weights = compute_fusion_weights(views, config.fusion)
    result = blend(views, weights)
    for i, w in zip(valid, weights):
        reports[i].weight_sum = float(w.sum())
    result.per_source = [r.as_dict() for r in reports]
    return result
