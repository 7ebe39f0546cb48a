"""Geometry-guided cross-view attention kernels.

Feature grids are ``(height, width, channels)`` arrays. Grid cell ``(r, c)``
sits at pixel coordinate ``(c, r)`` unless a stride is given, so a grid can
stand for either a full image or a downsampled feature map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeMismatchError
from .geometry import (
    CameraModel,
    Homography,
    PlaneParams,
    geometric_homography,
    planar_homography,
    project_points,
    relative_pose,
)

logger = logging.getLogger(__name__)

# channel widths of the denoiser encoder stages the attention would be inserted into
UNET_ENCODER_DIMS = (320, 640, 1280, 1280)
DEFAULT_LEVEL_DEPTHS = (10.0, 30.0, np.inf)
DEFAULT_KERNEL_SIGMA = 2.0


@dataclass(frozen=True)
class CorrespondenceGrid:
    coords: np.ndarray  # (H, W, 2) projected (x, y), NaN where invalid
    valid: np.ndarray  # finite projection
    inside: np.ndarray  # valid and within the destination frame


def grid_coordinates(width: int, height: int, stride: float = 1.0) -> np.ndarray:
    """Pixel coordinates ``(x, y)`` of every grid cell centre, shape ``(H, W, 2)``."""
    xs = (np.arange(width) + 0.5) * stride - 0.5
    ys = (np.arange(height) + 0.5) * stride - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def correspondence_grid(
    h: Homography, width: int, height: int, dst_size: tuple[int, int] | None = None
) -> CorrespondenceGrid:
    """``pi(H p)`` for every pixel ``p`` of a ``width x height`` grid.

    Zero denominators are flagged rather than raised. ``inside`` uses the
    destination frame ``dst_size = (width, height)``, defaulting to the
    source size.
    """
    pts = grid_coordinates(width, height).reshape(-1, 2)
    proj, ok = project_points(h, pts)
    dw, dh = dst_size or (width, height)
    inside = ok.copy()
    inside[ok] = (
        (proj[ok, 0] >= -0.5) & (proj[ok, 0] <= dw - 0.5) & (proj[ok, 1] >= -0.5) & (proj[ok, 1] <= dh - 0.5)
    )
    shape = (height, width)
    return CorrespondenceGrid(proj.reshape(shape + (2,)), ok.reshape(shape), inside.reshape(shape))


@dataclass(frozen=True)
class PEConfig:
    """Frequency matrices of shape ``(dims, 2)`` for the sine and cosine halves."""

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "w2"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2 or m.shape[1] != 2:
                raise ShapeMismatchError(f"{name} must have shape (dims, 2)")
            object.__setattr__(self, name, m)

    @classmethod
    def seeded(cls, dims: int = 16, seed: int = 0, scale: float = 0.1) -> "PEConfig":
        """Gaussian frequencies with standard deviation ``scale`` rad/px."""
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, (dims, 2)), rng.normal(0.0, scale, (dims, 2)))

    @property
    def size(self) -> int:
        return self.w1.shape[0] + self.w2.shape[0]


def positional_encoding(delta_p, cfg: PEConfig) -> np.ndarray:
    """``concat(sin(W1 dp), cos(W2 dp))`` for offsets of shape ``(..., 2)``."""
    d = np.asarray(delta_p, dtype=float)
    if d.shape[-1] != 2:
        raise ShapeMismatchError("offsets must have a trailing dimension of 2")
    return np.concatenate([np.sin(d @ cfg.w1.T), np.cos(d @ cfg.w2.T)], axis=-1)


@dataclass
class AttentionResult:
    output: np.ndarray  # (Hq, Wq, Cv)
    weights: np.ndarray  # (Nq, Nk) row-stochastic over admitted keys
    empty: np.ndarray  # (Hq, Wq) queries with no admitted key


def _flat(grid: np.ndarray, name: str) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 3:
        raise ShapeMismatchError(f"{name} must be a (height, width, channels) grid")
    if not np.all(np.isfinite(g)):
        raise ValueError(f"{name} has non-finite entries")
    return g.reshape(-1, g.shape[-1])


def _key_mask(mask, nq: int, k_shape: tuple[int, int]) -> np.ndarray:
    """Broadcast a per-key ``(Hk, Wk)`` or per-query ``(Nq, Nk)`` mask to ``(Nq, Nk)``."""
    nk = k_shape[0] * k_shape[1]
    if mask is None:
        return np.ones((nq, nk), dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape == k_shape:
        return np.broadcast_to(m.reshape(1, nk), (nq, nk))
    if m.shape == (nq, nk):
        return m
    if m.ndim == 4 and m.shape[2:] == k_shape and m.shape[0] * m.shape[1] == nq:
        return m.reshape(nq, nk)
    raise ShapeMismatchError(f"mask shape {m.shape} does not match keys {k_shape} / queries {nq}")


def masked_attention_level(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask=None) -> AttentionResult:
    """Scaled dot-product attention restricted to admitted key locations.

    Masked keys get a logit of minus infinity before the softmax. A query
    that admits no key returns the zero vector and is flagged in ``empty``.
    """
    qf, kf, vf = _flat(q, "q"), _flat(k, "k"), _flat(v, "v")
    if qf.shape[1] != kf.shape[1]:
        raise ShapeMismatchError("query and key channels differ")
    if np.shape(k)[:2] != np.shape(v)[:2]:
        raise ShapeMismatchError("key and value grids differ in size")
    m = _key_mask(mask, len(qf), tuple(np.shape(k)[:2]))
    logits = np.where(m, qf @ kf.T / np.sqrt(qf.shape[1]), -np.inf)
    empty = ~m.any(axis=1)
    top = np.where(empty, 0.0, logits.max(axis=1, initial=-np.inf, where=m))
    e = np.where(m, np.exp(logits - top[:, None]), 0.0)
    z = e.sum(axis=1)
    weights = np.divide(e, z[:, None], out=np.zeros_like(e), where=z[:, None] > 0)
    out = weights @ vf
    hq, wq = np.shape(q)[:2]
    if empty.any():
        logger.debug("%d queries admit no key", int(empty.sum()))
    return AttentionResult(out.reshape(hq, wq, vf.shape[1]), weights, empty.reshape(hq, wq))


@dataclass(frozen=True)
class AttentionConfig:
    layer_weights: tuple[float, ...]
    level_masks: tuple = ()  # one mask per level; ``None`` admits every key
    kernel_sigma: float = DEFAULT_KERNEL_SIGMA

    def __post_init__(self):
        w = np.asarray(self.layer_weights, dtype=float)
        object.__setattr__(self, "layer_weights", tuple(float(x) for x in w))
        if len(w) < 1:
            raise ValueError("need at least one level")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("layer weights must be nonnegative and sum to 1")
        masks = tuple(self.level_masks) or (None,) * len(w)
        if len(masks) != len(w):
            raise ValueError("one mask per level is required")
        object.__setattr__(self, "level_masks", masks)
        if not self.kernel_sigma > 0:
            raise ValueError("kernel_sigma must be positive")

    @property
    def levels(self) -> int:
        return len(self.layer_weights)

    @classmethod
    def uniform(cls, masks: Sequence, kernel_sigma: float = DEFAULT_KERNEL_SIGMA) -> "AttentionConfig":
        n = len(masks)
        return cls(tuple([1.0 / n] * n), tuple(masks), kernel_sigma)


@dataclass
class HierarchicalResult:
    output: np.ndarray
    levels: list[AttentionResult] = field(default_factory=list)

    @property
    def empty(self) -> np.ndarray:
        return np.any([lv.empty for lv in self.levels], axis=0)


def _per_level(x, n: int, name: str) -> list:
    if isinstance(x, (list, tuple)):
        if len(x) != n:
            raise ShapeMismatchError(f"need one {name} grid per level")
        return list(x)
    return [x] * n


def hierarchical_attention(q, k, v, cfg: AttentionConfig) -> HierarchicalResult:
    """Weighted sum over levels of masked attention outputs.

    ``k`` and ``v`` may be single grids shared by all levels or one grid per
    level.
    """
    ks = _per_level(k, cfg.levels, "key")
    vs = _per_level(v, cfg.levels, "value")
    levels = [masked_attention_level(q, kl, vl, m) for kl, vl, m in zip(ks, vs, cfg.level_masks)]
    out = sum(w * lv.output for w, lv in zip(cfg.layer_weights, levels))
    return HierarchicalResult(out, levels)


def depth_level_masks(
    src: CameraModel,
    dst: CameraModel,
    grid_size: tuple[int, int],
    depths: Sequence[float] = DEFAULT_LEVEL_DEPTHS,
    radius: float = 1.5,
) -> list[np.ndarray]:
    """Per-query key masks from fronto-parallel depth hypotheses.

    For each depth the plane ``z = depth`` in the source camera induces a
    homography; a key cell is admitted when it lies within ``radius`` grid
    cells of the projected query. ``inf`` selects the rotation-only map.

    Args:
        grid_size: ``(width, height)`` of the feature grid shared by both views.

    Returns:
        One boolean ``(Nq, Nk)`` array per depth.
    """
    gw, gh = grid_size
    r, t = relative_pose(src.pose, dst.pose)
    sx, sy = src.width / gw, src.height / gh
    q_pix = grid_coordinates(gw, gh).reshape(-1, 2) * [sx, sy] + [(sx - 1) / 2, (sy - 1) / 2]
    k_cells = grid_coordinates(gw, gh).reshape(-1, 2)
    masks = []
    for d in depths:
        if np.isinf(d):
            h = geometric_homography(src.intrinsics, src.pose.rotation, dst.intrinsics, dst.pose.rotation)
        else:
            h = planar_homography(src.intrinsics, dst.intrinsics, r, t, PlaneParams([0, 0, -1], float(d)))
        proj, ok = project_points(h, q_pix)
        dsx, dsy = dst.width / gw, dst.height / gh
        cells = (proj - [(dsx - 1) / 2, (dsy - 1) / 2]) / [dsx, dsy]
        dist = np.linalg.norm(cells[:, None, :] - k_cells[None, :, :], axis=-1)
        masks.append(ok[:, None] & (dist <= radius))
    return masks


@dataclass
class TargetMap:
    matrix: np.ndarray  # (N, N) row-stochastic
    uniform_rows: np.ndarray  # (N,) rows whose projection left the frame


def target_attention_map(
    h: Homography, width: int, height: int, kernel_sigma: float = DEFAULT_KERNEL_SIGMA
) -> TargetMap:
    """Gaussian-kernel attention target around each projected grid location.

    Row ``i`` is proportional to ``exp(-|p_j - pi(H p_i)|^2 / (2 sigma^2))``
    over all grid cells ``j``, normalised in log space so that tiny sigmas
    do not underflow. Rows whose projection falls outside the frame are
    uniform and flagged.
    """
    if not kernel_sigma > 0:
        raise ValueError("kernel_sigma must be positive")
    corr = correspondence_grid(h, width, height)
    src = corr.coords.reshape(-1, 2)
    inside = corr.inside.reshape(-1)
    pts = grid_coordinates(width, height).reshape(-1, 2)
    n = len(pts)
    mat = np.full((n, n), 1.0 / n)
    if inside.any():
        d2 = ((src[inside, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
        logit = -d2 / (2.0 * kernel_sigma**2)
        logit -= logit.max(axis=1, keepdims=True)
        e = np.exp(logit)
        mat[inside] = e / e.sum(axis=1, keepdims=True)
    return TargetMap(mat, ~inside)
