"""Sparse ground-truth evaluation from coloured point clouds.

A point cloud is coloured from the rig cameras, projected into a target view
with z-buffering, and the resulting scattered reference pixels are compared
against a synthesised image with PSNR, SSIM, MAE and RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import InsufficientCoverageError, NoReferenceError, ShapeMismatchError
from .geometry import CameraModel

PSNR_CAP_DB = 100.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
DEPTH_TOLERANCE = 0.05


@dataclass
class ColoredPointCloud:
    xyz: np.ndarray
    rgb: np.ndarray
    source: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        self.rgb = np.asarray(self.rgb, dtype=np.uint8).reshape(-1, 3)
        if len(self.xyz) != len(self.rgb):
            raise ShapeMismatchError("xyz and rgb must have the same length")
        if not self.source:
            self.source = [""] * len(self.xyz)
        if len(self.source) != len(self.xyz):
            raise ShapeMismatchError("source list length must match the point count")

    def __len__(self) -> int:
        return len(self.xyz)


@dataclass
class SparseReference:
    pixels: np.ndarray  # (N, 2) integer (u, v)
    rgb: np.ndarray  # (N, 3) uint8
    depth: np.ndarray  # (N,)
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def coverage(self) -> float:
        return len(self.pixels) / float(self.width * self.height)

    def raster(self) -> tuple[np.ndarray, np.ndarray]:
        """Splat to ``(image, mask)`` of the reference frame."""
        img = np.zeros((self.height, self.width, 3), dtype=np.uint8)
        mask = np.zeros((self.height, self.width), dtype=bool)
        if len(self):
            u, v = self.pixels[:, 0], self.pixels[:, 1]
            img[v, u] = self.rgb
            mask[v, u] = True
        return img, mask


@dataclass(frozen=True)
class SsimProtocol:
    window: int = 11
    sigma: float = 1.5
    min_coverage: float = 0.5

    def as_dict(self) -> dict:
        return {
            "window": self.window,
            "sigma": self.sigma,
            "min_coverage": self.min_coverage,
            "luma": "ITU-R BT.601",
            "c1": (0.01 * 255) ** 2,
            "c2": (0.03 * 255) ** 2,
        }


@dataclass(frozen=True)
class SparseMetrics:
    psnr: float
    ssim: float
    mae: float
    rmse: float
    coverage: float
    samples: int = 0
    protocol: SsimProtocol = SsimProtocol()

    def as_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "mae": self.mae,
            "rmse": self.rmse,
            "coverage": self.coverage,
            "samples": self.samples,
            "ssim_protocol": self.protocol.as_dict(),
            "zbuffer": {"colorize": True, "project": True},
        }


def _bilinear(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    x = np.clip(uv[:, 0], 0, w - 1)
    y = np.clip(uv[:, 1], 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), w - 2) if w > 1 else np.zeros(len(x), int)
    y0 = np.minimum(np.floor(y).astype(int), h - 2) if h > 1 else np.zeros(len(y), int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    im = image.astype(float)
    top = im[y0, x0] * (1 - fx) + im[y0, x1] * fx
    bot = im[y1, x0] * (1 - fx) + im[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _zbuffer_keep(pix_id: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Indices of the nearest point per pixel; ties go to the lower index."""
    order = np.lexsort((np.arange(len(depth)), depth, pix_id))
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_id[order][1:] != pix_id[order][:-1]
    return order[first]


def _visible_in(cam: CameraModel, xyz: np.ndarray, depth_tolerance: float):
    uv, depth = cam.project(xyz)
    with np.errstate(invalid="ignore"):
        in_frame = (
            (depth > 0)
            & (uv[:, 0] >= -0.5)
            & (uv[:, 0] < cam.width - 0.5)
            & (uv[:, 1] >= -0.5)
            & (uv[:, 1] < cam.height - 0.5)
        )
    visible = np.zeros(len(xyz), dtype=bool)
    idx = np.flatnonzero(in_frame)
    if len(idx):
        iu = np.rint(uv[idx, 0]).astype(int)
        iv = np.rint(uv[idx, 1]).astype(int)
        pix = iv * cam.width + iu
        zbuf = np.full(cam.width * cam.height, np.inf)
        np.minimum.at(zbuf, pix, depth[idx])
        visible[idx] = depth[idx] <= zbuf[pix] * (1.0 + depth_tolerance)
    return uv, visible


def colorize_point_cloud(
    points: np.ndarray,
    cameras: Sequence[CameraModel],
    images: Sequence[np.ndarray],
    depth_tolerance: float = DEPTH_TOLERANCE,
) -> ColoredPointCloud:
    """Colour world points from the camera that sees them most head-on.

    A camera is eligible for a point when the point lies in front of it,
    inside its frame, and survives its z-buffer (within ``depth_tolerance``
    relative depth of the nearest point on that pixel). Among eligible
    cameras the smallest angle between the optical axis and the ray to the
    point wins; ties go to the camera name that sorts first. Points no camera
    can see are dropped. Colours are sampled bilinearly.
    """
    xyz = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(cameras) != len(images):
        raise ShapeMismatchError("one image per camera is required")
    n = len(xyz)
    best_cos = np.full(n, -np.inf)
    best_cam = np.full(n, -1)
    best_uv = np.zeros((n, 2))
    # name order makes strict-improvement ties deterministic
    order = sorted(range(len(cameras)), key=lambda i: cameras[i].name)
    for ci in order:
        cam = cameras[ci]
        uv, visible = _visible_in(cam, xyz, depth_tolerance)
        rays = xyz - cam.pose.translation
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = (rays @ cam.pose.optical_axis) / np.linalg.norm(rays, axis=1)
        better = visible & (cos > best_cos)
        best_cos[better] = cos[better]
        best_cam[better] = ci
        best_uv[better] = uv[better]
    keep = best_cam >= 0
    rgb = np.zeros((n, 3), dtype=np.uint8)
    for ci in np.unique(best_cam[keep]):
        sel = best_cam == ci
        rgb[sel] = np.clip(np.rint(_bilinear(images[ci], best_uv[sel])), 0, 255).astype(np.uint8)
    names = [cameras[ci].name for ci in best_cam[keep]]
    return ColoredPointCloud(xyz[keep], rgb[keep], names)


def project_sparse_reference(
    cloud: ColoredPointCloud, target: CameraModel, width: int | None = None, height: int | None = None
) -> SparseReference:
    """Z-buffered pinhole projection of a coloured cloud into ``target``."""
    width = target.width if width is None else width
    height = target.height if height is None else height
    if len(cloud) == 0:
        return SparseReference(np.zeros((0, 2), int), np.zeros((0, 3), np.uint8), np.zeros(0), width, height)
    uv, depth = target.project(cloud.xyz)
    with np.errstate(invalid="ignore"):
        iu = np.rint(uv[:, 0])
        iv = np.rint(uv[:, 1])
        ok = (depth > 0) & (iu >= 0) & (iu < width) & (iv >= 0) & (iv < height)
    idx = np.flatnonzero(ok)
    iu = iu[idx].astype(int)
    iv = iv[idx].astype(int)
    keep = _zbuffer_keep(iv * width + iu, depth[idx])
    sel = idx[keep]
    pixels = np.stack([iu[keep], iv[keep]], axis=1)
    return SparseReference(pixels, cloud.rgb[sel].copy(), depth[sel].copy(), width, height)


def _check(ref: SparseReference, image: np.ndarray) -> np.ndarray:
    if len(ref) == 0:
        raise NoReferenceError("no reference samples")
    image = np.asarray(image)
    if image.shape[:2] != (ref.height, ref.width):
        raise ShapeMismatchError(
            f"image {image.shape[:2]} does not match reference frame {(ref.height, ref.width)}"
        )
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    return image


def _sample_errors(ref: SparseReference, image: np.ndarray) -> np.ndarray:
    image = _check(ref, image)
    got = image[ref.pixels[:, 1], ref.pixels[:, 0]].astype(float)
    return got - ref.rgb.astype(float)


def sparse_mae(ref: SparseReference, image: np.ndarray) -> float:
    return float(np.mean(np.abs(_sample_errors(ref, image))))


def sparse_rmse(ref: SparseReference, image: np.ndarray) -> float:
    return float(np.sqrt(np.mean(_sample_errors(ref, image) ** 2)))


def psnr_from_rmse(rmse: float) -> float:
    if rmse < 255.0 * 1e-5:
        return PSNR_CAP_DB
    return float(20.0 * np.log10(255.0 / rmse))


def sparse_psnr(ref: SparseReference, image: np.ndarray) -> float:
    return psnr_from_rmse(sparse_rmse(ref, image))


def to_luma(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        return image
    return image[..., :3] @ LUMA_WEIGHTS


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=float) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def masked_ssim(
    x: np.ndarray, y: np.ndarray, mask: np.ndarray, protocol: SsimProtocol = SsimProtocol()
) -> tuple[float, int]:
    """Mean SSIM over windows fully inside the frame with enough valid pixels.

    Window statistics are Gaussian-weighted and renormalised over the valid
    pixels of each window. Returns ``(ssim, n_windows)``.
    """
    g = gaussian_window(protocol.window, protocol.sigma)
    m = mask.astype(float)
    pad = protocol.window // 2

    def filt(a):
        out = ndimage.correlate1d(a, g, axis=0, mode="constant")
        out = ndimage.correlate1d(out, g, axis=1, mode="constant")
        return out[pad:-pad, pad:-pad] if pad else out

    box = np.ones(protocol.window) / protocol.window
    count = ndimage.correlate1d(m, box, axis=0, mode="constant")
    count = ndimage.correlate1d(count, box, axis=1, mode="constant")
    count = count[pad:-pad, pad:-pad] if pad else count

    xm, ym = x * m, y * m
    wsum = filt(m)
    ok = (count >= protocol.min_coverage - 1e-12) & (wsum > 0)
    n = int(np.count_nonzero(ok))
    if n == 0:
        raise InsufficientCoverageError("insufficient coverage for any SSIM window")
    w = wsum[ok]
    mx = filt(xm)[ok] / w
    my = filt(ym)[ok] / w
    vx = filt(xm * x)[ok] / w - mx**2
    vy = filt(ym * y)[ok] / w - my**2
    cxy = filt(xm * y)[ok] / w - mx * my
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(np.mean(s)), n


def sparse_ssim(ref: SparseReference, image: np.ndarray, protocol: SsimProtocol = SsimProtocol()) -> float:
    image = _check(ref, image)
    ref_img, mask = ref.raster()
    return masked_ssim(to_luma(ref_img), to_luma(image), mask, protocol)[0]


def evaluate(image: np.ndarray, ref: SparseReference, protocol: SsimProtocol = SsimProtocol()) -> SparseMetrics:
    err = _sample_errors(ref, image)
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    return SparseMetrics(
        psnr=psnr_from_rmse(rmse),
        ssim=sparse_ssim(ref, image, protocol),
        mae=mae,
        rmse=rmse,
        coverage=ref.coverage,
        samples=len(ref),
        protocol=protocol,
    )


# dense counterparts, used for reporting and as equivalence oracles


def dense_rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a.astype(float) - b.astype(float)) ** 2)))


def dense_psnr(a: np.ndarray, b: np.ndarray) -> float:
    return psnr_from_rmse(dense_rmse(a, b))


def interior_mask(shape: tuple[int, int], margin: int) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[margin : shape[0] - margin, margin : shape[1] - margin] = True
    return mask


def restrict(ref: SparseReference, mask: np.ndarray) -> SparseReference:
    """Keep only reference samples on pixels where ``mask`` is true."""
    keep = mask[ref.pixels[:, 1], ref.pixels[:, 0]] if len(ref) else np.zeros(0, bool)
    return SparseReference(ref.pixels[keep], ref.rgb[keep], ref.depth[keep], ref.width, ref.height)
