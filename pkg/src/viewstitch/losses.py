"""Forward-evaluated training losses for the cross-view consistency objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatchError
from .evaluation import to_luma

DEFAULT_LAMBDAS = (1.0, 0.5, 0.25)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.01
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")
        if any(v < 0 for v in self.lambdas):
            raise ValueError("layer weights must be nonnegative")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def geo_consistency_loss(pred_maps: Sequence[np.ndarray], target_maps: Sequence[np.ndarray]) -> float:
    """Sum over map pairs of the Frobenius norm of their difference."""
    if len(pred_maps) != len(target_maps):
        raise ShapeMismatchError("prediction and target lists differ in length")
    total = 0.0
    for p, t in zip(pred_maps, target_maps):
        p, t = _pair(p, t)
        total += float(np.linalg.norm((p - t).ravel()))
    return total


def denoising_loss(epsilon, epsilon_pred) -> float:
    """Mean squared error between the true and predicted noise."""
    e, p = _pair(epsilon, epsilon_pred)
    if e.size == 0:
        raise ShapeMismatchError("empty tensors")
    return float(np.mean((e - p) ** 2))


def pyramid_features(image: np.ndarray, levels: int = 3) -> list[np.ndarray]:
    """Stand-in feature extractor: smoothed luma and its gradient magnitude per pyramid level.

    Level ``l`` is the image blurred and decimated ``l`` times by two; each
    feature grid has shape ``(h_l, w_l, 2)`` with luma scaled to [0, 1].
    """
    luma = to_luma(image) / 255.0
    feats = []
    cur = ndimage.gaussian_filter(luma, 1.0, mode="nearest")
    for level in range(levels):
        gy, gx = np.gradient(cur)
        feats.append(np.stack([cur, np.hypot(gx, gy)], axis=-1))
        if level + 1 < levels:
            cur = ndimage.gaussian_filter(cur, 1.0, mode="nearest")[::2, ::2]
    return feats


def perceptual_loss(
    feat_pred: Sequence[np.ndarray],
    feat_target: Sequence[np.ndarray],
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
) -> float:
    """``sum_l lambda_l * |phi_l(pred) - phi_l(target)|_2`` over given feature layers."""
    if len(feat_pred) != len(feat_target) or len(feat_pred) != len(lambdas):
        raise ShapeMismatchError("feature lists and layer weights must align")
    total = 0.0
    for lam, a, b in zip(lambdas, feat_pred, feat_target):
        if lam < 0:
            raise ValueError("layer weights must be nonnegative")
        a, b = _pair(a, b)
        total += lam * float(np.linalg.norm((a - b).ravel()))
    return total


def image_perceptual_loss(pred: np.ndarray, target: np.ndarray, lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> float:
    """Perceptual loss using the built-in pyramid extractor."""
    return perceptual_loss(pyramid_features(pred, len(lambdas)), pyramid_features(target, len(lambdas)), lambdas)


def total_loss(main: float, geo: float, perceptual: float, w: LossWeights = LossWeights()) -> float:
    """``main + alpha * geo + beta * perceptual``."""
    for v in (main, geo, perceptual):
        if v < 0:
            raise ValueError("loss terms must be nonnegative")
    return main + w.alpha * geo + w.beta * perceptual
