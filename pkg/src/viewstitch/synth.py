"""Deterministic procedural environments rendered through pinhole cameras.

These scenes give ground truth that a real rig cannot: renders at any novel
pose and exactly coloured surface points for sparse evaluation.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .evaluation import ColoredPointCloud
from .geometry import CameraModel, RotationAngles, pose_from_angles

logger = logging.getLogger(__name__)

FAR_FIELD_RATIO = 100.0

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_P = (np.uint64(0x9E3779B185EBCA87), np.uint64(0xC2B2AE3D27D4EB4F), np.uint64(0x165667B19E3779F9))


class EnvKind(str, enum.Enum):
    FAR_SPHERE = "far_sphere"
    GROUND_PLANE = "ground_plane"
    COMPOSITE = "composite"


@dataclass(frozen=True)
class Environment:
    """A textured world.

    ``far_sphere`` is a sphere of ``radius`` metres centred at the origin.
    ``ground_plane`` is the plane ``z = ground_height`` (z points down).
    ``composite`` is the ground plane inside the sphere.
    """

    kind: EnvKind = EnvKind.FAR_SPHERE
    seed: int = 0
    radius: float = 100.0
    ground_height: float = 1.6
    octaves: int = 6
    base_frequency: float = 6.0
    ground_frequency: float = 0.5
    grid_spacing_deg: float = 10.0
    grid_width_deg: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "kind", EnvKind(self.kind))
        if self.radius <= 0 or self.ground_height <= 0:
            raise ValueError("radius and ground height must be positive")
        if self.octaves < 1:
            raise ValueError("need at least one noise octave")


def rig_baseline(cameras: Sequence[CameraModel]) -> float:
    centers = np.array([c.pose.translation for c in cameras])
    if len(centers) < 2:
        return 0.0
    diff = centers[:, None, :] - centers[None, :, :]
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def check_far_field(env: Environment, cameras: Sequence[CameraModel]) -> None:
    """Raise ``ValueError`` unless the sphere is far relative to the rig."""
    if env.kind is EnvKind.GROUND_PLANE:
        return
    baseline = rig_baseline(cameras)
    if env.radius < FAR_FIELD_RATIO * baseline:
        raise ValueError(
            f"sphere radius {env.radius} m is below {FAR_FIELD_RATIO:g} x rig baseline ({baseline:.3f} m)"
        )


def _mix(h: np.ndarray) -> np.ndarray:
    h = h ^ (h >> np.uint64(30))
    h = h * _M1
    h = h ^ (h >> np.uint64(27))
    h = h * _M2
    return h ^ (h >> np.uint64(31))


def _mix_int(x: int) -> int:
    mask = 0xFFFFFFFFFFFFFFFF
    x = (x + 0x632BE59BD9B4E019) & mask
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & mask
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & mask
    return x ^ (x >> 31)


def _lattice_hash(i, j, k, seed: np.uint64) -> np.ndarray:
    h = (i.astype(np.uint64) * _P[0]) ^ (j.astype(np.uint64) * _P[1]) ^ (k.astype(np.uint64) * _P[2])
    return _mix(h ^ seed)


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def value_noise3(p: np.ndarray, seed: int) -> np.ndarray:
    """Three-channel C2 value noise in [0, 1) at points ``p`` of shape (..., 3)."""
    s = np.uint64(_mix_int(seed))
    flat = p.reshape(-1, 3)
    base = np.floor(flat)
    w = _fade(flat - base)
    base = base.astype(np.int64)
    n = len(flat)

    def corner(dx, dy, dz):
        h = _lattice_hash(base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz, s)
        # three 16-bit lanes of the hash -> three channels
        return h.view(np.uint16).reshape(n, 4)[:, :3].astype(float)

    wx, wy, wz = (w[:, i : i + 1] for i in range(3))
    out = None
    for dz in (0, 1):
        plane = None
        for dy in (0, 1):
            a = corner(0, dy, dz)
            row = a + wx * (corner(1, dy, dz) - a)
            plane = row if plane is None else plane + wy * (row - plane)
        out = plane if out is None else out + wz * (plane - out)
    return (out / 65536.0).reshape(p.shape[:-1] + (3,))


def _fractal(p: np.ndarray, env: Environment) -> np.ndarray:
    acc = np.zeros(p.shape[:-1] + (3,))
    total = 0.0
    amp = 1.0
    for octave in range(env.octaves):
        acc += amp * value_noise3(p * (2.0**octave), env.seed * 7919 + octave)
        total += amp
        amp *= 0.6
    return acc / total


def _grid_lines(lon: np.ndarray, lat: np.ndarray, env: Environment) -> np.ndarray:
    step = np.deg2rad(env.grid_spacing_deg)
    width = np.deg2rad(env.grid_width_deg)
    d_lat = np.abs((lat + 0.5 * step) % step - 0.5 * step)
    d_lon = np.abs((lon + 0.5 * step) % step - 0.5 * step) * np.cos(lat)
    d = np.minimum(d_lat, d_lon)
    return np.exp(-0.5 * (d / width) ** 2)


def _sphere_color(points: np.ndarray, env: Environment) -> np.ndarray:
    u = points / np.linalg.norm(points, axis=-1, keepdims=True)
    noise = _fractal(u * env.base_frequency + 17.0, env)
    lon = np.arctan2(u[..., 0], -u[..., 1])
    lat = np.arcsin(np.clip(-u[..., 2], -1.0, 1.0))
    lines = _grid_lines(lon, lat, env)
    # stretch contrast around the noise mean
    rgb = np.clip(0.5 + 1.8 * (noise - 0.5), 0.0, 1.0)
    rgb = rgb * (1.0 - 0.55 * lines[..., None])
    return 25.0 + 205.0 * rgb


def _ground_color(points: np.ndarray, env: Environment) -> np.ndarray:
    q = np.stack([points[..., 0], points[..., 1], np.zeros(points.shape[:-1])], axis=-1)
    noise = _fractal(q * env.ground_frequency + 101.0, env)
    gx = np.abs((points[..., 0] + 0.5) % 1.0 - 0.5)
    gy = np.abs((points[..., 1] + 0.5) % 1.0 - 0.5)
    lines = np.exp(-0.5 * (np.minimum(gx, gy) / 0.03) ** 2)
    rgb = np.clip(0.5 + 1.6 * (noise - 0.5), 0.0, 1.0) * (1.0 - 0.5 * lines[..., None])
    return 30.0 + 180.0 * rgb


def surface_color(env: Environment, points: np.ndarray, on_ground: np.ndarray | None = None) -> np.ndarray:
    """Exact (unquantised) RGB of surface points, values in [0, 255]."""
    points = np.asarray(points, dtype=float)
    if env.kind is EnvKind.FAR_SPHERE:
        return _sphere_color(points, env)
    if env.kind is EnvKind.GROUND_PLANE:
        return _ground_color(points, env)
    if on_ground is None:
        on_ground = np.abs(points[..., 2] - env.ground_height) < 1e-6
    out = np.empty(points.shape[:-1] + (3,))
    if np.any(on_ground):
        out[on_ground] = _ground_color(points[on_ground], env)
    if np.any(~on_ground):
        out[~on_ground] = _sphere_color(points[~on_ground], env)
    return out


def _intersect(env: Environment, origin: np.ndarray, dirs: np.ndarray):
    """Ray hits: ``(distance along ray, on_ground mask)``; inf where no hit."""
    dist = np.full(dirs.shape[:-1], np.inf)
    on_ground = np.zeros(dirs.shape[:-1], dtype=bool)
    if env.kind in (EnvKind.GROUND_PLANE, EnvKind.COMPOSITE):
        dz = dirs[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = (env.ground_height - origin[2]) / dz
        hit = (dz > 1e-9) & (tg > 0)
        dist = np.where(hit, tg, dist)
        on_ground = hit
    if env.kind in (EnvKind.FAR_SPHERE, EnvKind.COMPOSITE):
        b = dirs @ origin
        c = float(origin @ origin) - env.radius**2
        ts = -b + np.sqrt(np.maximum(b * b - c, 0.0))
        use_sphere = ts < dist
        dist = np.where(use_sphere, ts, dist)
        on_ground = on_ground & ~use_sphere
    return dist, on_ground


def render_with_depth(
    env: Environment, cam: CameraModel, width: int | None = None, height: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render and also return per-pixel depth (m along +z) and a ground mask."""
    if width is not None or height is not None:
        cam = CameraModel(
            cam.name, cam.intrinsics, cam.pose, width or cam.width, height or cam.height, cam.primary
        )
    dirs = cam.pixel_rays()
    origin = cam.pose.translation
    dist, on_ground = _intersect(env, origin, dirs)
    hit = np.isfinite(dist)
    pts = origin + dirs * np.where(hit, dist, 0.0)[..., None]
    color = np.zeros(dirs.shape)
    if np.any(hit):
        color[hit] = surface_color(env, pts[hit], on_ground[hit])
    # depth along the optical axis
    depth = np.where(hit, dist * (dirs @ cam.pose.optical_axis), np.inf)
    image = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    return image, depth, on_ground


def render_view(
    env: Environment, cam: CameraModel, width: int | None = None, height: int | None = None
) -> np.ndarray:
    """Ray-cast ``env`` through ``cam``; returns an ``(H, W, 3)`` uint8 image."""
    return render_with_depth(env, cam, width, height)[0]


def sample_environment_points(
    env: Environment,
    n: int,
    seed: int,
    lat_range_deg: tuple[float, float] = (-35.0, 35.0),
    ground_range: tuple[float, float] = (2.0, 40.0),
) -> ColoredPointCloud:
    """Draw ``n`` surface points with their exact texture colours.

    Sphere points are drawn uniformly on the latitude band ``lat_range_deg``;
    ground points uniformly around the origin within ``ground_range`` metres.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    lo, hi = np.deg2rad(lat_range_deg)

    def sphere_points(m):
        lon = rng.uniform(-np.pi, np.pi, m)
        # area-uniform latitude
        lat = np.arcsin(rng.uniform(np.sin(lo), np.sin(hi), m))
        u = np.stack([np.sin(lon) * np.cos(lat), -np.cos(lon) * np.cos(lat), -np.sin(lat)], axis=-1)
        return u * env.radius

    def ground_points(m):
        r = np.sqrt(rng.uniform(ground_range[0] ** 2, ground_range[1] ** 2, m))
        a = rng.uniform(-np.pi, np.pi, m)
        return np.stack([r * np.cos(a), r * np.sin(a), np.full(m, env.ground_height)], axis=-1)

    if env.kind is EnvKind.FAR_SPHERE:
        pts = sphere_points(n)
        on_ground = np.zeros(n, dtype=bool)
    elif env.kind is EnvKind.GROUND_PLANE:
        pts = ground_points(n)
        on_ground = np.ones(n, dtype=bool)
    else:
        n_ground = n // 2
        sph = sphere_points(4 * (n - n_ground) + 16)
        # sphere points below the ground are hidden from every rig camera
        sph = sph[sph[:, 2] < env.ground_height][: n - n_ground]
        pts = np.concatenate([ground_points(n_ground), sph])
        on_ground = np.arange(len(pts)) < n_ground
    rgb = np.clip(np.rint(surface_color(env, pts, on_ground)), 0, 255).astype(np.uint8)
    return ColoredPointCloud(pts, rgb, ["synthetic"] * len(pts))


def sample_view_points(
    env: Environment, cameras: Sequence[CameraModel], n_per_view: int, seed: int
) -> ColoredPointCloud:
    """Surface points seen through uniformly random sub-pixel positions of each camera.

    Useful when a reference cloud must densely cover particular views.
    """
    if n_per_view < 1:
        raise ValueError("n_per_view must be at least 1")
    rng = np.random.default_rng(seed)
    chunks, grounds = [], []
    for cam in cameras:
        k = cam.intrinsics
        u = rng.uniform(-0.5, cam.width - 0.5, n_per_view)
        v = rng.uniform(-0.5, cam.height - 0.5, n_per_view)
        d = np.stack([(u - k.cx) / k.f, (v - k.cy) / k.f, np.ones(n_per_view)], axis=-1) @ cam.pose.rotation
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        dist, on_ground = _intersect(env, cam.pose.translation, d)
        hit = np.isfinite(dist)
        chunks.append(cam.pose.translation + d[hit] * dist[hit, None])
        grounds.append(on_ground[hit])
    pts = np.concatenate(chunks)
    on_ground = np.concatenate(grounds)
    rgb = np.clip(np.rint(surface_color(env, pts, on_ground)), 0, 255).astype(np.uint8)
    return ColoredPointCloud(pts, rgb, ["synthetic"] * len(pts))


DEFAULT_YAWS = {
    "front": 0.0,
    "front_right": 55.0,
    "front_left": -55.0,
    "back": 180.0,
    "back_left": -125.0,
    "back_right": 125.0,
}


def default_rig(
    width: int = 640,
    height: int = 480,
    f: float | None = None,
    ring_radius: float = 0.3,
    yaws: dict[str, float] | None = None,
) -> list[CameraModel]:
    """Six-camera surround rig with shared intrinsics.

    Each camera sits ``ring_radius`` metres from the rig centre along its own
    viewing direction. The default focal length gives a 70 degree horizontal
    field of view.
    """
    yaws = DEFAULT_YAWS if yaws is None else yaws
    if f is None:
        f = 0.5 * width / np.tan(np.deg2rad(35.0))
    cams = []
    for name, yaw in yaws.items():
        a = RotationAngles.from_degrees(yaw, 0.0)
        pos = ring_radius * np.array([np.sin(a.theta), -np.cos(a.theta), 0.0])
        pose = pose_from_angles(a, pos)
        cams.append(
            CameraModel.from_angles(
                name, f, width / 2.0, height / 2.0, a.theta, a.phi, pose.translation, width, height
            )
        )
    return cams


@dataclass
class SyntheticFrame:
    env: Environment
    cameras: list[CameraModel]
    images: dict[str, np.ndarray] = field(default_factory=dict)

    def image_list(self) -> list[np.ndarray]:
        return [self.images[c.name] for c in self.cameras]


def render_frame(env: Environment, cameras: Sequence[CameraModel]) -> SyntheticFrame:
    check_far_field(env, cameras)
    return SyntheticFrame(env, list(cameras), {c.name: render_view(env, c) for c in cameras})
