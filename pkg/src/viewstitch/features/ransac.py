"""Robust homography estimation and the geometry/feature arbitration."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateConfigurationError, InsufficientMatchesError
from ..geometry import Homography, Provenance, check_homography, image_corners, project_points
from .matching import MatchSet
from .sift import KeypointSet

logger = logging.getLogger(__name__)

T_LOW = 5.0
T_HIGH = 30.0
MIN_MATCHES = 10


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 2000
    inlier_threshold_px: float = 3.0
    seed: int = 0
    confidence: float = 0.999
    refine_rounds: int = 5


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Stacked DLT constraint rows; ``src``/``dst`` have shape (..., n, 2)."""
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    r1 = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=-1)
    r2 = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=-1)
    return np.concatenate([r1, r2], axis=-2)


def fit_homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalised direct linear transform, least squares over all pairs."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 4:
        raise InsufficientMatchesError("insufficient matches")
    ts, td = _normalizer(src), _normalizer(dst)
    sn = src @ ts[:2, :2].T + ts[:2, 2]
    dn = dst @ td[:2, :2].T + td[:2, 2]
    a = _dlt_rows(sn, dn)
    _, sv, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(td) @ hn @ ts
    if abs(m[2, 2]) > 1e-12:
        m = m / m[2, 2]
    return m


def _collinear(p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """True where any three of the four points in each sample are (nearly) collinear."""
    deg = np.zeros(p.shape[0], dtype=bool)
    span = np.ptp(p.reshape(-1, 2), axis=0).max() if p.size else 1.0
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a = p[:, j] - p[:, i]
        b = p[:, k] - p[:, i]
        area = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        deg |= area <= tol * max(span, 1e-12) ** 2
    return deg


def transfer_error(m: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    proj, ok = project_points(m, src)
    err = np.linalg.norm(proj - dst, axis=1)
    err[~ok] = np.inf
    return err


def ransac_homography(src: np.ndarray, dst: np.ndarray, config: RansacConfig = RansacConfig()):
    """Fit ``dst ~ H src`` robustly.

    Minimal 4-point hypotheses are drawn from a generator seeded with
    ``config.seed``; the best consensus set is refit with the normalised DLT
    until it stops changing. Results depend only on the inputs, their order
    and the seed.

    Returns:
        ``(Homography, inlier_mask)``; every flagged inlier has forward
        transfer error at most ``config.inlier_threshold_px`` under the
        returned homography.

    Raises:
        InsufficientMatchesError: fewer than four correspondences.
        DegenerateConfigurationError: no non-degenerate minimal sample.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise InsufficientMatchesError("insufficient matches")
    thr = config.inlier_threshold_px
    rng = np.random.default_rng(config.seed)
    ts, td = _normalizer(src), _normalizer(dst)
    sn = src @ ts[:2, :2].T + ts[:2, 2]
    dn = dst @ td[:2, :2].T + td[:2, 2]
    t_back = np.linalg.inv(td)

    best_count, best_cost, best_m = -1, np.inf, None
    budget = config.iterations
    drawn = 0
    any_valid = False
    chunk = 256
    while drawn < budget:
        m_iter = min(chunk, budget - drawn)
        samples = np.argsort(rng.random((m_iter, n)), axis=1)[:, :4]
        drawn += m_iter
        ps, pd = sn[samples], dn[samples]
        ok = ~(_collinear(ps) | _collinear(pd))
        if not np.any(ok):
            continue
        any_valid = True
        _, _, vt = np.linalg.svd(_dlt_rows(ps[ok], pd[ok]))
        hn = vt[:, -1].reshape(-1, 3, 3)
        hs = t_back @ hn @ ts
        # forward transfer errors for all hypotheses at once
        hom = np.c_[src, np.ones(n)]
        proj = np.einsum("kij,nj->kni", hs, hom)
        w = proj[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.hypot(proj[..., 0] / w - dst[:, 0], proj[..., 1] / w - dst[:, 1])
        err = np.where(np.abs(w) > 1e-12, err, np.inf)
        inl = err <= thr
        counts = inl.sum(axis=1)
        costs = np.where(inl, err**2, thr**2).sum(axis=1)
        k = np.lexsort((costs, -counts))[0]
        if counts[k] > best_count or (counts[k] == best_count and costs[k] < best_cost):
            best_count, best_cost, best_m = int(counts[k]), float(costs[k]), hs[k]
        if best_count >= 4 and config.confidence < 1:
            frac = best_count / n
            p_good = frac**4
            if p_good >= 1:
                break
            need = np.log(1 - config.confidence) / np.log(max(1 - p_good, 1e-12))
            budget = min(budget, int(np.ceil(need)) + 1)
    if not any_valid or best_m is None:
        raise DegenerateConfigurationError("degenerate configuration")

    mask = transfer_error(best_m, src, dst) <= thr
    m = best_m / best_m[2, 2] if abs(best_m[2, 2]) > 1e-12 else best_m
    for _ in range(config.refine_rounds):
        if mask.sum() < 4:
            break
        refit = fit_homography_dlt(src[mask], dst[mask])
        new_mask = transfer_error(refit, src, dst) <= thr
        if new_mask.sum() < mask.sum():
            break
        m = refit
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    mask = transfer_error(m, src, dst) <= thr
    return Homography(m, Provenance.FEATURE), mask


def estimate_homography_ransac(
    matches: MatchSet,
    kp_src: KeypointSet | np.ndarray,
    kp_ref: KeypointSet | np.ndarray,
    config: RansacConfig = RansacConfig(),
):
    """RANSAC on matched keypoints; positions may be given as ``(N, 2)`` arrays."""
    xy_src = kp_src.xy if isinstance(kp_src, KeypointSet) else np.asarray(kp_src)
    xy_ref = kp_ref.xy if isinstance(kp_ref, KeypointSet) else np.asarray(kp_ref)
    return ransac_homography(xy_src[matches.src_idx], xy_ref[matches.ref_idx], config)


class Verdict(str, enum.Enum):
    CONSISTENT = "consistent"
    PARTIALLY_CONSISTENT = "partially_consistent"
    INCONSISTENT = "inconsistent"


@dataclass(frozen=True)
class ConsistencyScore:
    mean_corner_error: float
    verdict: Verdict
    reason: str = ""


@dataclass(frozen=True)
class SelectionConfig:
    min_matches: int = MIN_MATCHES
    t_low: float = T_LOW
    t_high: float = T_HIGH

    def __post_init__(self):
        if not 0 <= self.t_low < self.t_high:
            raise ValueError("need 0 <= t_low < t_high")


def homography_consistency(
    h_geom: Homography,
    h_feat: Homography,
    width: int,
    height: int,
    config: SelectionConfig = SelectionConfig(),
) -> ConsistencyScore:
    """Mean distance between where the two homographies send the frame corners."""
    for label, h in (("geometric", h_geom), ("feature", h_feat)):
        rep = check_homography(h, width, height)
        if not rep.valid:
            return ConsistencyScore(float("inf"), Verdict.INCONSISTENT, f"{label} homography invalid: {rep.reason}")
    corners = image_corners(width, height)
    a, _ = project_points(h_geom, corners)
    b, _ = project_points(h_feat, corners)
    err = float(np.mean(np.linalg.norm(a - b, axis=1)))
    if err < config.t_low:
        verdict = Verdict.CONSISTENT
    elif err < config.t_high:
        verdict = Verdict.PARTIALLY_CONSISTENT
    else:
        verdict = Verdict.INCONSISTENT
    return ConsistencyScore(err, verdict)


def blend_alpha(error: float, config: SelectionConfig = SelectionConfig()) -> float:
    """Geometry weight: 0 at ``t_low`` rising linearly to 1 at ``t_high``."""
    return float(np.clip((error - config.t_low) / (config.t_high - config.t_low), 0.0, 1.0))


def select_base_homography(
    h_geom: Homography,
    h_feat: Homography | None,
    n_matches: int,
    score: ConsistencyScore | None,
    frame: tuple[int, int],
    config: SelectionConfig = SelectionConfig(),
) -> tuple[Homography, float]:
    """Choose between the geometric and the feature homography.

    ``frame`` is the source ``(width, height)``. Returns ``(H_base, alpha)``
    where ``alpha`` is the weight given to the geometric estimate; the
    provenance of ``H_base`` records the branch taken.
    """
    width, height = frame
    geom = Homography(h_geom.m, Provenance.GEOMETRIC)
    if h_feat is None or score is None or n_matches < config.min_matches:
        return geom, 1.0
    if not check_homography(h_feat, width, height).valid:
        return geom, 1.0
    if score.verdict is Verdict.CONSISTENT:
        return Homography(h_feat.m, Provenance.FEATURE), 0.0
    if score.verdict is Verdict.PARTIALLY_CONSISTENT:
        alpha = blend_alpha(score.mean_corner_error, config)
        mixed = Homography(alpha * geom.m + (1.0 - alpha) * h_feat.m, Provenance.BLENDED)
        if check_homography(mixed, width, height).valid:
            return mixed, alpha
        logger.debug("blended homography failed the validity check; using geometry")
    return geom, 1.0
