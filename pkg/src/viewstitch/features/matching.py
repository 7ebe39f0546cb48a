"""Exact nearest-neighbour descriptor matching with the ratio test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InsufficientMatchesError, ShapeMismatchError

BRUTE_FORCE_BELOW = 256
DEFAULT_RATIO = 0.75


@dataclass
class MatchSet:
    """Retained matches as parallel arrays.

    ``src_idx[i]`` in the source descriptor set matches ``ref_idx[i]`` in the
    reference set with nearest distance ``d1[i]`` and second-nearest ``d2[i]``.
    """

    src_idx: np.ndarray
    ref_idx: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    @classmethod
    def empty(cls) -> "MatchSet":
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return len(self.src_idx)

    def subset(self, idx) -> "MatchSet":
        return MatchSet(self.src_idx[idx], self.ref_idx[idx], self.d1[idx], self.d2[idx])

    def pairs(self):
        return list(zip(self.src_idx.tolist(), self.ref_idx.tolist(), self.d1.tolist(), self.d2.tolist()))


def two_nearest(des1: np.ndarray, des2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact two nearest neighbours of every ``des1`` row among ``des2`` rows.

    Returns ``(dist, idx)`` of shape ``(n1, 2)``, ordered nearest first; ties
    keep the lower reference index first.
    """
    if len(des2) < BRUTE_FORCE_BELOW:
        d2 = (
            np.sum(des1**2, axis=1)[:, None]
            + np.sum(des2**2, axis=1)[None, :]
            - 2.0 * des1 @ des2.T
        )
        d = np.sqrt(np.maximum(d2, 0.0))
        idx = np.argsort(d, axis=1, kind="stable")[:, :2]
        return np.take_along_axis(d, idx, axis=1), idx
    tree = cKDTree(des2)
    dist, idx = tree.query(des1, k=2)
    return dist, idx


def match_descriptors(des1: np.ndarray, des2: np.ndarray, ratio: float = DEFAULT_RATIO) -> MatchSet:
    """Keep a source descriptor's nearest reference iff ``d1 / d2 < ratio``.

    Raises:
        InsufficientMatchesError: if ``des2`` has fewer than two rows.
        ShapeMismatchError: if descriptor lengths differ.
    """
    des1 = np.asarray(des1, dtype=float)
    des2 = np.asarray(des2, dtype=float)
    if len(des2) < 2:
        raise InsufficientMatchesError("ratio test needs at least two reference descriptors")
    if len(des1) == 0:
        return MatchSet.empty()
    if des1.shape[1] != des2.shape[1]:
        raise ShapeMismatchError("descriptor lengths differ")
    dist, idx = two_nearest(des1, des2)
    d1, d2 = dist[:, 0], dist[:, 1]
    # d1 < ratio * d2 avoids dividing by a zero second distance
    keep = np.flatnonzero(d1 < ratio * d2)
    return MatchSet(keep, idx[keep, 0], d1[keep], d2[keep])
