"""Perspective warping and weighted multi-view compositing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidHomographyError, ShapeMismatchError, ViewStitchError
from .evaluation import to_luma
from .geometry import Homography, check_homography


@dataclass
class WarpedView:
    image: np.ndarray  # (H, W, 3) uint8, zero outside coverage
    coverage: np.ndarray  # (H, W) bool
    source_id: str = ""
    quality: float = 1.0
    is_primary: bool = False

    def __post_init__(self):
        if self.image.shape[:2] != self.coverage.shape:
            raise ShapeMismatchError("image and coverage must share the frame size")


@dataclass(frozen=True)
class FusionConfig:
    gamma: float = 2.0
    sigma: float = 50.0
    primary_bonus: float = 1.5

    def __post_init__(self):
        if self.gamma <= 0 or self.sigma <= 0:
            raise ValueError("gamma and sigma must be positive")
        if self.primary_bonus < 1:
            raise ValueError("primary_bonus must be >= 1")


@dataclass
class StitchResult:
    image: np.ndarray
    total_weight: np.ndarray
    hole_mask: np.ndarray
    per_source: list[dict] = field(default_factory=list)

    @property
    def coverage(self) -> float:
        return 1.0 - float(self.hole_mask.mean())


def _as_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    return image


def _inverse_map(h: Homography, sw: int, sh: int, out_width: int, out_height: int):
    """Pre-images of every target pixel and the mask of those inside the source frame."""
    hinv = h.inverse().m
    xs, ys = np.meshgrid(np.arange(out_width, dtype=float), np.arange(out_height, dtype=float))
    den = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    # keep the half-space that maps to the front of the source camera
    front = den > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / den
        sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / den
        cov = front & (sx >= 0) & (sx <= sw - 1) & (sy >= 0) & (sy <= sh - 1)
    return sx, sy, cov


def warp_coverage(h: Homography, src_width: int, src_height: int, out_width: int, out_height: int) -> np.ndarray:
    """Coverage mask that ``warp_perspective`` would produce, without sampling colours."""
    return _inverse_map(h, src_width, src_height, out_width, out_height)[2]


def warp_perspective(
    image: np.ndarray,
    h: Homography,
    out_width: int,
    out_height: int,
    source_id: str = "",
    check: bool = True,
) -> WarpedView:
    """Inverse-map ``image`` through ``h`` with bilinear interpolation.

    A target pixel is covered when its pre-image lies inside the source
    frame, i.e. within ``[0, W-1] x [0, H-1]`` in pixel-centre coordinates.

    Raises:
        InvalidHomographyError: when ``check`` is set and ``h`` fails
            ``check_homography`` on the source frame.
    """
    image = _as_rgb(image)
    sh, sw = image.shape[:2]
    if check:
        report = check_homography(h, sw, sh)
        if not report.valid:
            raise InvalidHomographyError(f"cannot warp with invalid homography: {report.reason}")
    sx, sy, cov = _inverse_map(h, sw, sh, out_width, out_height)
    out = np.zeros((out_height, out_width, image.shape[2]), dtype=np.uint8)
    if np.any(cov):
        x = sx[cov]
        y = sy[cov]
        x0 = np.floor(x).astype(np.intp)
        y0 = np.floor(y).astype(np.intp)
        x1 = np.minimum(x0 + 1, sw - 1)
        y1 = np.minimum(y0 + 1, sh - 1)
        fx = (x - x0)[:, None]
        fy = (y - y0)[:, None]
        src = image.astype(float)
        top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
        bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
        val = top * (1.0 - fy) + bot * fy
        out[cov] = np.clip(np.rint(val), 0, 255).astype(np.uint8)
    return WarpedView(out, cov, source_id)


def distance_weight(coverage: np.ndarray, gamma: float) -> np.ndarray:
    """``(d / d_max) ** gamma`` with ``d`` the distance to the nearest uncovered pixel.

    Pixels just outside the frame count as uncovered.
    """
    mask = np.asarray(coverage, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape)
    d = ndimage.distance_transform_edt(np.pad(mask, 1))[1:-1, 1:-1]
    w = (d / d.max()) ** gamma
    w[~mask] = 0.0
    return w


def gradient_weight(image: np.ndarray, sigma: float) -> np.ndarray:
    """``1 / (1 + |grad luma| / sigma)`` with central differences."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    luma = to_luma(image)
    gy, gx = np.gradient(luma)
    return 1.0 / (1.0 + np.hypot(gx, gy) / sigma)


def compute_fusion_weights(views: Sequence[WarpedView], config: FusionConfig = FusionConfig()) -> list[np.ndarray]:
    shapes = {v.coverage.shape for v in views}
    if len(shapes) > 1:
        raise ShapeMismatchError("all views must share the target frame")
    weights = []
    for v in views:
        w = distance_weight(v.coverage, config.gamma) * gradient_weight(v.image, config.sigma)
        w *= v.quality * (config.primary_bonus if v.is_primary else 1.0)
        w[~v.coverage] = 0.0
        weights.append(w)
    return weights


def blend(views: Sequence[WarpedView], weights: Sequence[np.ndarray]) -> StitchResult:
    """Per-pixel weighted mean; pixels with zero total weight become black holes."""
    if not views:
        raise ViewStitchError("cannot blend an empty view list")
    if len(views) != len(weights):
        raise ShapeMismatchError("one weight map per view is required")
    h, w = views[0].coverage.shape
    num = np.zeros((h, w, views[0].image.shape[2]))
    den = np.zeros((h, w))
    for v, wt in zip(views, weights):
        if wt.shape != (h, w) or v.coverage.shape != (h, w):
            raise ShapeMismatchError("views and weights must share the target frame")
        num += wt[..., None] * v.image
        den += wt
    holes = den <= 0
    out = np.zeros_like(views[0].image)
    covered = ~holes
    out[covered] = np.clip(np.rint(num[covered] / den[covered, None]), 0, 255).astype(np.uint8)
    return StitchResult(out, den, holes)
