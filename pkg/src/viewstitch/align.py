"""Density clustering of matched keypoints and object-level alignment offsets."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoUsableClustersError
from .geometry import Homography, Provenance, project_points

NOISE = -1
REFERENCE_DIAGONAL = float(np.hypot(1600, 900))
TYPE_WEIGHTS = {"generic": 1.0, "compact": 1.2, "elongated": 1.1}


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 30.0
    min_samples: int = 5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be at least 1")

    def scaled_to(self, width: int, height: int) -> "ClusterConfig":
        """Rescale ``eps`` from the 1600x900 reference frame by image diagonal."""
        return ClusterConfig(self.eps * float(np.hypot(width, height)) / REFERENCE_DIAGONAL, self.min_samples)


class ObjectType(str, enum.Enum):
    GENERIC = "generic"
    COMPACT = "compact"
    ELONGATED = "elongated"


@dataclass(frozen=True)
class ObjectCluster:
    center_src: np.ndarray
    center_ref: np.ndarray
    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1 in the source image
    confidence: float
    type_label: ObjectType
    point_count: int
    members: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @property
    def bbox_area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return max((x1 - x0) * (y1 - y0), 1.0)

    def as_dict(self) -> dict:
        return {
            "center_src": [float(v) for v in self.center_src],
            "center_ref": [float(v) for v in self.center_ref],
            "bbox": [float(v) for v in self.bbox],
            "confidence": float(self.confidence),
            "type": self.type_label.value,
            "point_count": int(self.point_count),
        }


def neighborhoods(points: np.ndarray, eps: float) -> list[np.ndarray]:
    """Indices within ``eps`` (inclusive, self included) of each point."""
    if len(points) == 0:
        return []
    tree = cKDTree(points)
    return [np.sort(np.asarray(n, dtype=int)) for n in tree.query_ball_point(points, eps)]


def dbscan(points: np.ndarray, config: ClusterConfig = ClusterConfig()) -> np.ndarray:
    """Density-based clustering; returns labels ``0..k-1`` or ``-1`` for noise.

    A point is core when at least ``min_samples`` points (itself included)
    lie within ``eps``. Clusters are grown breadth-first from the lowest
    unassigned core index; a border point reachable from several clusters
    joins the first one that reaches it.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    nbrs = neighborhoods(pts, config.eps)
    core = np.array([len(nb) >= config.min_samples for nb in nbrs])
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in nbrs[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


def classify_object(bbox: tuple[float, float, float, float], eps: float) -> ObjectType:
    """Shape heuristic standing in for a semantic detector."""
    x0, y0, x1, y1 = bbox
    w, h = max(x1 - x0, 1.0), max(y1 - y0, 1.0)
    if max(w, h) / min(w, h) >= 2.0:
        return ObjectType.ELONGATED
    if w * h <= (4.0 * eps) ** 2:
        return ObjectType.COMPACT
    return ObjectType.GENERIC


def build_clusters(
    src_xy: np.ndarray,
    ref_xy: np.ndarray,
    labels: np.ndarray,
    config: ClusterConfig = ClusterConfig(),
    inlier_mask: np.ndarray | None = None,
) -> list[ObjectCluster]:
    """Summarise each labelled cluster of matched pairs.

    ``src_xy[i]`` and ``ref_xy[i]`` are the two ends of match ``i``. When an
    inlier mask is given, only inlier matches count as cluster members (so
    that outliers do not bias the centroids) and ``confidence`` is the
    inlier fraction of the whole density cluster; clusters left with fewer
    than ``min_samples`` members are dropped.
    """
    src_xy = np.asarray(src_xy, dtype=float).reshape(-1, 2)
    ref_xy = np.asarray(ref_xy, dtype=float).reshape(-1, 2)
    labels = np.asarray(labels)
    inl = np.ones(len(labels), dtype=bool) if inlier_mask is None else np.asarray(inlier_mask, bool)
    clusters = []
    for lab in np.unique(labels[labels != NOISE]):
        in_cluster = np.flatnonzero(labels == lab)
        members = in_cluster[inl[in_cluster]]
        if len(members) < config.min_samples:
            continue
        s = src_xy[members]
        bbox = (float(s[:, 0].min()), float(s[:, 1].min()), float(s[:, 0].max()), float(s[:, 1].max()))
        clusters.append(
            ObjectCluster(
                center_src=s.mean(axis=0),
                center_ref=ref_xy[members].mean(axis=0),
                bbox=bbox,
                confidence=len(members) / len(in_cluster),
                type_label=classify_object(bbox, config.eps),
                point_count=len(members),
                members=members,
            )
        )
    return clusters


def density_factor(cluster: ObjectCluster) -> float:
    return float(np.clip(cluster.point_count / (cluster.bbox_area / 1000.0), 0.5, 2.0))


def alignment_weights(clusters: list[ObjectCluster], type_weights: dict[str, float] | None = None) -> np.ndarray:
    """``confidence * type_weight * density_factor`` per cluster."""
    tw = TYPE_WEIGHTS if type_weights is None else type_weights
    return np.array(
        [c.confidence * tw[c.type_label.value] * density_factor(c) for c in clusters], dtype=float
    )


def solve_alignment_offset(clusters: list[ObjectCluster], weights: np.ndarray, h_base: Homography) -> np.ndarray:
    """Translation minimising the weighted squared centroid residuals.

    The minimiser is the weighted mean of ``c_ref - pi(H_base c_src)``.

    Raises:
        NoUsableClustersError: if the weights sum to zero.
    """
    w = np.asarray(weights, dtype=float)
    if len(clusters) == 0 or not np.sum(w) > 0:
        raise NoUsableClustersError("no usable clusters")
    c1 = np.array([c.center_src for c in clusters])
    c2 = np.array([c.center_ref for c in clusters])
    pred, ok = project_points(h_base, c1)
    if not np.all(ok[w > 0]):
        raise NoUsableClustersError("cluster centre maps to infinity")
    resid = c2 - pred
    use = w > 0
    return (w[use, None] * resid[use]).sum(axis=0) / w[use].sum()


def compose_aligned_homography(h_base: Homography, delta_t, beta: float = 0.5) -> Homography:
    """Left-multiply ``h_base`` by a translation of ``beta * delta_t``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    dx, dy = np.asarray(delta_t, dtype=float).reshape(2)
    t = np.array([[1.0, 0.0, beta * dx], [0.0, 1.0, beta * dy], [0.0, 0.0, 1.0]])
    return Homography(t @ h_base.m, Provenance.ALIGNED)


def debug_dump(clusters: list[ObjectCluster], weights: np.ndarray, delta_t) -> dict:
    return {
        "clusters": [dict(c.as_dict(), weight=float(w)) for c, w in zip(clusters, weights)],
        "delta_t": None if delta_t is None else [float(v) for v in np.asarray(delta_t).reshape(2)],
    }
