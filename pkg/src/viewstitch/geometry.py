"""Pinhole camera models, rotation parameterization and homographies.

Conventions used throughout the package:

* World / rig frame is right-handed with ``x`` right, ``y`` backward and
  ``z`` down. In this frame ``R = Rz(theta) @ Rx(phi)`` is the camera body
  orientation with ``theta`` a clockwise-from-above azimuth (positive turns
  right) and ``phi`` an elevation (positive tilts up).
* Camera (optical) frame: ``x`` right, ``y`` down, camera looks down ``+z``.
* Pixel coordinates have their origin at the top-left pixel centre; pixel
  ``(u, v)`` is column ``u``, row ``v``.
* All matrices are row-major numpy arrays. ``CameraPose.rotation`` is the
  world-to-camera rotation and ``CameraPose.translation`` is the camera
  centre in world coordinates, so ``X_cam = R @ (X_world - C)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidHomographyError, PointAtInfinityError

ORTHO_TOL = 1e-9

# camera body frame (x right, y back, z down) -> optical frame (x right, y down, z forward)
BODY_TO_OPTICAL = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, -1.0, 0.0],
    ]
)

# check_homography thresholds
MIN_AREA_RATIO = 0.1
MAX_AREA_RATIO = 10.0
MIN_CORNER_DENOM = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    f: float
    cx: float
    cy: float

    def __post_init__(self):
        if not np.isfinite(self.f) or self.f <= 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return intrinsics_matrix(self)


@dataclass(frozen=True)
class RotationAngles:
    """Azimuth ``theta`` and elevation ``phi`` in radians."""

    theta: float
    phi: float

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.phi)):
            raise ValueError("rotation angles must be finite")

    @classmethod
    def from_degrees(cls, theta_deg: float, phi_deg: float) -> "RotationAngles":
        return cls(np.deg2rad(theta_deg), np.deg2rad(phi_deg))


def _check_rotation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=ORTHO_TOL * 10) or abs(np.linalg.det(r) - 1) > 1e-8:
        raise ValueError("rotation must be orthonormal with det = +1")
    return r


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rotation and camera centre in world coordinates (m)."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)

    @property
    def extrinsic_t(self) -> np.ndarray:
        """``t`` in ``X_cam = R X_world + t``."""
        return -self.rotation @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction in world coordinates."""
        return self.rotation[2].copy()

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.translation) @ self.rotation.T

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


@dataclass(frozen=True)
class PlaneParams:
    """Plane ``n . X + d = 0`` expressed in the source camera frame."""

    normal: np.ndarray
    distance: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be a unit vector")
        if not self.distance > 0:
            raise ValueError("plane distance must be positive")
        object.__setattr__(self, "normal", n)


class Provenance(str, enum.Enum):
    GEOMETRIC = "geometric"
    FEATURE = "feature"
    BLENDED = "blended"
    ALIGNED = "aligned"


@dataclass(frozen=True)
class Homography:
    m: np.ndarray
    provenance: Provenance = Provenance.GEOMETRIC

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(3, 3)
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        m.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @classmethod
    def identity(cls, provenance: Provenance = Provenance.GEOMETRIC) -> "Homography":
        return cls(np.eye(3), provenance)

    @classmethod
    def translation(cls, tx: float, ty: float, provenance=Provenance.GEOMETRIC) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]), provenance)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.m))

    @property
    def is_degenerate(self) -> bool:
        scale = np.linalg.norm(self.m) ** 3
        return not np.all(np.isfinite(self.m)) or abs(self.det) <= 1e-12 * max(scale, 1e-300)

    def inverse(self) -> "Homography":
        if self.is_degenerate:
            raise InvalidHomographyError("cannot invert a degenerate homography")
        return Homography(np.linalg.inv(self.m), self.provenance)

    def __matmul__(self, other: "Homography") -> "Homography":
        # provenance follows the outer (left) factor
        return Homography(self.m @ other.m, self.provenance)

    def __eq__(self, other):
        if not isinstance(other, Homography):
            return NotImplemented
        return self.provenance == other.provenance and np.array_equal(self.m, other.m)

    __hash__ = None


@dataclass(frozen=True)
class CameraModel:
    """A named pinhole camera with an image frame of ``width`` x ``height`` px."""

    name: str
    intrinsics: Intrinsics
    pose: CameraPose
    width: int
    height: int
    primary: bool = False

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @classmethod
    def from_angles(
        cls,
        name: str,
        f: float,
        cx: float,
        cy: float,
        theta: float,
        phi: float,
        translation: Sequence[float] = (0.0, 0.0, 0.0),
        width: int = 640,
        height: int = 480,
        primary: bool = False,
    ) -> "CameraModel":
        """Build a camera from azimuth/elevation given in radians."""
        pose = pose_from_angles(RotationAngles(theta, phi), translation)
        return cls(name, Intrinsics(f, cx, cy), pose, int(width), int(height), primary)

    @property
    def K(self) -> np.ndarray:
        return self.intrinsics.matrix

    @property
    def angles(self) -> RotationAngles:
        return angles_from_rotation(self.pose.rotation)

    def with_pose(self, pose: CameraPose, name: str | None = None) -> "CameraModel":
        return CameraModel(
            name or self.name, self.intrinsics, pose, self.width, self.height, self.primary
        )

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns ``(uv, depth)`` with depth along +z."""
        cam = self.pose.to_camera(np.atleast_2d(points))
        depth = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = (cam[:, :2] / depth[:, None]) * self.intrinsics.f + np.array(
                [self.intrinsics.cx, self.intrinsics.cy]
            )
        return uv, depth

    def pixel_rays(self) -> np.ndarray:
        """Unit world-frame ray directions, shape ``(height, width, 3)``."""
        k = self.intrinsics
        u, v = np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))
        d_cam = np.stack([(u - k.cx) / k.f, (v - k.cy) / k.f, np.ones_like(u)], axis=-1)
        d_world = d_cam @ self.pose.rotation
        return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)


def intrinsics_matrix(k: Intrinsics) -> np.ndarray:
    return np.array([[k.f, 0.0, k.cx], [0.0, k.f, k.cy], [0.0, 0.0, 1.0]])


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_angles(a: RotationAngles) -> np.ndarray:
    """Body orientation ``Rz(theta) @ Rx(phi)``."""
    return rot_z(a.theta) @ rot_x(a.phi)


def pose_from_angles(a: RotationAngles, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> CameraPose:
    """Camera pose whose body orientation is ``rotation_from_angles(a)``.

    The world-to-camera rotation is ``BODY_TO_OPTICAL @ R.T``; at zero angles
    the camera looks along world ``-y`` (forward).
    """
    r_wc = BODY_TO_OPTICAL @ rotation_from_angles(a).T
    return CameraPose(r_wc, np.asarray(translation, dtype=float))


def angles_from_rotation(r_wc: np.ndarray) -> RotationAngles:
    """Recover azimuth/elevation from a roll-free world-to-camera rotation."""
    body = (BODY_TO_OPTICAL.T @ np.asarray(r_wc)).T
    # forward axis of the body (-y column) = (sin t cos p, -cos t cos p, -sin p)
    fwd = -body[:, 1]
    phi = np.arcsin(np.clip(-fwd[2], -1.0, 1.0))
    theta = np.arctan2(fwd[0], -fwd[1])
    return RotationAngles(float(theta), float(phi))


def relative_pose(src: CameraPose, dst: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """``(R, t)`` with ``X_dst = R @ X_src + t`` in camera coordinates."""
    r = dst.rotation @ src.rotation.T
    t = dst.rotation @ (src.translation - dst.translation)
    return r, t


def geometric_homography(
    k1: Intrinsics, r1: np.ndarray, k2: Intrinsics, r2: np.ndarray
) -> Homography:
    """Rotation-only pixel map from camera 1 to camera 2.

    ``r1`` and ``r2`` are world-to-camera rotations; translation between the
    cameras is neglected (far-field approximation).
    """
    r1 = _check_rotation(r1)
    r2 = _check_rotation(r2)
    k1_inv = np.linalg.inv(intrinsics_matrix(k1))
    m = intrinsics_matrix(k2) @ r2 @ r1.T @ k1_inv
    return Homography(m, Provenance.GEOMETRIC)


def camera_homography(src: CameraModel, dst: CameraModel) -> Homography:
    return geometric_homography(src.intrinsics, src.pose.rotation, dst.intrinsics, dst.pose.rotation)


def corner_depths(src: CameraModel, dst: CameraModel) -> np.ndarray:
    """Depth sign test: z of the source corner rays expressed in ``dst``'s frame.

    Normalising a homography discards the sign of its denominator, so a
    camera facing away from ``dst`` can still pass ``check_homography``.
    """
    corners = np.c_[image_corners(src.width, src.height), np.ones(4)]
    rays = corners @ np.linalg.inv(src.K).T
    r = dst.pose.rotation @ src.pose.rotation.T
    return (rays @ r.T)[:, 2]


def planar_homography(
    k1: Intrinsics, k2: Intrinsics, r: np.ndarray, t: Sequence[float], plane: PlaneParams
) -> Homography:
    """Homography induced by the plane ``n . X1 + d = 0``.

    ``(r, t)`` maps source camera coordinates to target camera coordinates,
    ``X2 = r @ X1 + t``.

    Raises:
        InvalidHomographyError: if the resulting matrix is singular.
    """
    r = _check_rotation(r)
    t = np.asarray(t, dtype=float).reshape(3, 1)
    n = plane.normal.reshape(1, 3)
    m = intrinsics_matrix(k2) @ (r - t @ n / plane.distance) @ np.linalg.inv(intrinsics_matrix(k1))
    h = Homography(m, Provenance.GEOMETRIC)
    if h.is_degenerate:
        raise InvalidHomographyError("plane-induced homography is singular")
    return h


def project_points(h: Homography | np.ndarray, pts: np.ndarray, eps: float = 1e-12):
    """Vectorised ``pi(H p)``; returns ``(points, valid)`` without raising.

    Points with ``|denominator| <= eps`` are flagged invalid and set to NaN.
    """
    m = h.m if isinstance(h, Homography) else np.asarray(h, dtype=float)
    pts = np.asarray(pts, dtype=float)
    shape = pts.shape
    p = pts.reshape(-1, 2)
    x = m[0, 0] * p[:, 0] + m[0, 1] * p[:, 1] + m[0, 2]
    y = m[1, 0] * p[:, 0] + m[1, 1] * p[:, 1] + m[1, 2]
    w = m[2, 0] * p[:, 0] + m[2, 1] * p[:, 1] + m[2, 2]
    valid = np.abs(w) > eps
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.stack([x / w, y / w], axis=-1)
    out[~valid] = np.nan
    return out.reshape(shape), valid.reshape(shape[:-1])


def apply_homography(h: Homography, p) -> np.ndarray:
    """Map a pixel (or an ``(N, 2)`` array of pixels) through ``h``.

    Raises:
        PointAtInfinityError: if any projection denominator is zero.
    """
    out, valid = project_points(h, np.asarray(p, dtype=float))
    if not np.all(valid):
        raise PointAtInfinityError("point at infinity")
    return out


@dataclass(frozen=True)
class ValidityReport:
    corners: np.ndarray
    convex: bool
    area_ratio: float
    valid: bool
    reason: str = ""


def image_corners(width: int, height: int) -> np.ndarray:
    """Corner pixel centres in TL, TR, BR, BL order."""
    w, h = float(width - 1), float(height - 1)
    return np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])


def _quad_area(q: np.ndarray) -> float:
    x, y = q[:, 0], q[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def check_homography(h: Homography, width: int, height: int) -> ValidityReport:
    """Validate a homography by where it sends the four frame corners.

    Invalid when a corner goes to infinity, the warped quad is not convex
    with the original winding, or its area ratio leaves [0.1, 10].
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    corners = image_corners(width, height)
    m = h.m
    if not np.all(np.isfinite(m)):
        return ValidityReport(np.full((4, 2), np.nan), False, float("nan"), False, "non-finite matrix")
    denom = corners @ m[2, :2] + m[2, 2]
    if np.any(np.abs(denom) <= MIN_CORNER_DENOM):
        return ValidityReport(np.full((4, 2), np.nan), False, float("nan"), False, "corner at infinity")
    if not (np.all(denom > 0) or np.all(denom < 0)):
        warped, _ = project_points(h, corners)
        return ValidityReport(warped, False, float("nan"), False, "quad crosses the line at infinity")

    warped, _ = project_points(h, corners)
    edges = np.roll(warped, -1, axis=0) - warped
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    # original TL,TR,BR,BL order has positive winding in y-down pixel coordinates
    convex = bool(np.all(cross > 0))
    base = _quad_area(corners)
    area_ratio = _quad_area(warped) / base if base > 0 else float("nan")

    if not convex:
        return ValidityReport(warped, False, area_ratio, False, "non-convex or flipped quad")
    if not (MIN_AREA_RATIO <= area_ratio <= MAX_AREA_RATIO):
        return ValidityReport(warped, True, area_ratio, False, "area ratio out of range")
    return ValidityReport(warped, True, area_ratio, True, "")
