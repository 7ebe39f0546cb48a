from .cache import load_keypoints, save_keypoints
from .matching import MatchSet, match_descriptors
from .ransac import (
    ConsistencyScore,
    RansacConfig,
    SelectionConfig,
    Verdict,
    estimate_homography_ransac,
    fit_homography_dlt,
    homography_consistency,
    ransac_homography,
    select_base_homography,
)
from .sift import Keypoint, KeypointSet, SiftConfig, detect_features

__all__ = [
    "ConsistencyScore",
    "Keypoint",
    "KeypointSet",
    "MatchSet",
    "RansacConfig",
    "SelectionConfig",
    "SiftConfig",
    "Verdict",
    "detect_features",
    "estimate_homography_ransac",
    "fit_homography_dlt",
    "homography_consistency",
    "load_keypoints",
    "match_descriptors",
    "ransac_homography",
    "save_keypoints",
    "select_base_homography",
]
