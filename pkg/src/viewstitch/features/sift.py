"""Difference-of-Gaussians keypoints with gradient-histogram descriptors.

A vectorised numpy/scipy implementation of the classical scale-invariant
feature transform: extrema of a DoG pyramid are refined to sub-pixel
accuracy, filtered for contrast and edge response, assigned dominant
gradient orientations and described by a 4x4 grid of 8-bin orientation
histograms (128 values).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy import ndimage

from ..errors import ImageTooSmallError
from ..evaluation import to_luma

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 32
INIT_BLUR = 0.5
IMG_BORDER = 5
ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0
ORI_PEAK_RATIO = 0.8
DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE_FACTOR = 3.0
DESC_MAG_CLIP = 0.2
BATCH = 256


@dataclass(frozen=True)
class SiftConfig:
    n_octaves: int = 4
    scales_per_octave: int = 3
    sigma: float = 1.6
    contrast_threshold: float = 0.03
    edge_threshold: float = 10.0
    max_features: int | None = 3000
    refine_iterations: int = 5


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float
    orientation: float
    response: float


@dataclass
class KeypointSet:
    """Column-oriented keypoints; ``xy`` is in base-image pixel coordinates."""

    xy: np.ndarray
    scale: np.ndarray
    orientation: np.ndarray
    response: np.ndarray
    octave: np.ndarray

    @classmethod
    def empty(cls) -> "KeypointSet":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.xy)

    def __getitem__(self, i: int) -> Keypoint:
        return Keypoint(float(self.xy[i, 0]), float(self.xy[i, 1]), float(self.scale[i]),
                        float(self.orientation[i]), float(self.response[i]))

    def __iter__(self) -> Iterator[Keypoint]:
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "KeypointSet":
        return KeypointSet(self.xy[idx], self.scale[idx], self.orientation[idx], self.response[idx],
                           self.octave[idx])


def _octave_sigmas(cfg: SiftConfig) -> np.ndarray:
    """Incremental blur between consecutive Gaussian levels of one octave."""
    s = cfg.scales_per_octave
    k = 2.0 ** (1.0 / s)
    total = cfg.sigma * k ** np.arange(s + 3)
    inc = np.empty(s + 3)
    inc[0] = cfg.sigma
    inc[1:] = np.sqrt(total[1:] ** 2 - total[:-1] ** 2)
    return inc


def build_pyramids(gray: np.ndarray, cfg: SiftConfig):
    """Gaussian and DoG pyramids as lists of ``(levels, H, W)`` arrays."""
    base = ndimage.gaussian_filter(gray, np.sqrt(max(cfg.sigma**2 - INIT_BLUR**2, 0.01)), mode="nearest")
    inc = _octave_sigmas(cfg)
    gauss, dog = [], []
    img = base
    for o in range(cfg.n_octaves):
        if min(img.shape) < 2 * IMG_BORDER + 3:
            break
        levels = [img]
        for sig in inc[1:]:
            levels.append(ndimage.gaussian_filter(levels[-1], sig, mode="nearest"))
        g = np.stack(levels)
        gauss.append(g)
        dog.append(g[1:] - g[:-1])
        img = g[cfg.scales_per_octave][::2, ::2]
    return gauss, dog


def _derivatives(d: np.ndarray, s, y, x):
    """Gradient and Hessian of the DoG stack at integer positions."""
    c = d[s, y, x]
    ds = 0.5 * (d[s + 1, y, x] - d[s - 1, y, x])
    dy = 0.5 * (d[s, y + 1, x] - d[s, y - 1, x])
    dx = 0.5 * (d[s, y, x + 1] - d[s, y, x - 1])
    dss = d[s + 1, y, x] + d[s - 1, y, x] - 2 * c
    dyy = d[s, y + 1, x] + d[s, y - 1, x] - 2 * c
    dxx = d[s, y, x + 1] + d[s, y, x - 1] - 2 * c
    dxy = 0.25 * (d[s, y + 1, x + 1] - d[s, y + 1, x - 1] - d[s, y - 1, x + 1] + d[s, y - 1, x - 1])
    dxs = 0.25 * (d[s + 1, y, x + 1] - d[s + 1, y, x - 1] - d[s - 1, y, x + 1] + d[s - 1, y, x - 1])
    dys = 0.25 * (d[s + 1, y + 1, x] - d[s + 1, y - 1, x] - d[s - 1, y + 1, x] + d[s - 1, y - 1, x])
    grad = np.stack([dx, dy, ds], axis=-1)
    hess = np.stack(
        [
            np.stack([dxx, dxy, dxs], axis=-1),
            np.stack([dxy, dyy, dys], axis=-1),
            np.stack([dxs, dys, dss], axis=-1),
        ],
        axis=-2,
    )
    return c, grad, hess


def _localize(d: np.ndarray, cfg: SiftConfig):
    """Find and refine scale-space extrema of one octave's DoG stack.

    Returns arrays ``(x, y, layer, value)`` in octave coordinates, where
    ``layer`` is fractional.
    """
    s_count = cfg.scales_per_octave
    nl, h, w = d.shape
    thr = 0.5 * cfg.contrast_threshold / s_count
    mx = ndimage.maximum_filter(d, size=3, mode="nearest")
    mn = ndimage.minimum_filter(d, size=3, mode="nearest")
    cand = ((d == mx) | (d == mn)) & (np.abs(d) > thr)
    cand[[0, -1]] = False
    cand[:, :IMG_BORDER] = False
    cand[:, -IMG_BORDER:] = False
    cand[:, :, :IMG_BORDER] = False
    cand[:, :, -IMG_BORDER:] = False
    s, y, x = np.nonzero(cand)
    if len(s) == 0:
        return (np.zeros(0),) * 4

    done = np.zeros(len(s), dtype=bool)
    offset = np.zeros((len(s), 3))
    alive = np.ones(len(s), dtype=bool)
    for _ in range(cfg.refine_iterations):
        idx = np.flatnonzero(alive & ~done)
        if len(idx) == 0:
            break
        _, grad, hess = _derivatives(d, s[idx], y[idx], x[idx])
        det = np.linalg.det(hess)
        ok = np.abs(det) > 1e-12
        off = np.zeros((len(idx), 3))
        if np.any(ok):
            off[ok] = -np.linalg.solve(hess[ok], grad[ok][..., None])[..., 0]
        alive[idx[~ok]] = False
        offset[idx] = off
        small = np.all(np.abs(off) < 0.5, axis=1) & ok
        done[idx[small]] = True
        move = idx[~small & ok]
        if len(move):
            step = np.rint(offset[move]).astype(int)
            x[move] += step[:, 0]
            y[move] += step[:, 1]
            s[move] += step[:, 2]
            inside = (
                (s[move] >= 1) & (s[move] <= s_count)
                & (y[move] >= IMG_BORDER) & (y[move] < h - IMG_BORDER)
                & (x[move] >= IMG_BORDER) & (x[move] < w - IMG_BORDER)
            )
            alive[move[~inside]] = False
    keep = np.flatnonzero(alive & done)
    if len(keep) == 0:
        return (np.zeros(0),) * 4
    s, y, x, offset = s[keep], y[keep], x[keep], offset[keep]
    c, grad, hess = _derivatives(d, s, y, x)
    value = c + 0.5 * np.einsum("ij,ij->i", grad, offset)
    contrast_ok = np.abs(value) * s_count >= cfg.contrast_threshold
    tr = hess[:, 0, 0] + hess[:, 1, 1]
    det2 = hess[:, 0, 0] * hess[:, 1, 1] - hess[:, 0, 1] ** 2
    r = cfg.edge_threshold
    edge_ok = (det2 > 0) & (tr**2 * r < (r + 1) ** 2 * det2)
    ok = contrast_ok & edge_ok
    return x[ok] + offset[ok, 0], y[ok] + offset[ok, 1], s[ok] + offset[ok, 2], value[ok]


def _gradients(g: np.ndarray):
    gy = np.zeros_like(g)
    gx = np.zeros_like(g)
    gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
    gy[1:-1, :] = g[2:, :] - g[:-2, :]
    return np.hypot(gx, gy), np.arctan2(gy, gx)


def _patch(mag, ang, cx, cy, radius):
    """Gather square patches around integer centres; out-of-frame samples get zero magnitude."""
    h, w = mag.shape
    off = np.arange(-radius, radius + 1)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    py = cy[:, None, None] + oy[None]
    px = cx[:, None, None] + ox[None]
    inside = (py >= 1) & (py < h - 1) & (px >= 1) & (px < w - 1)
    pyc = np.clip(py, 0, h - 1)
    pxc = np.clip(px, 0, w - 1)
    return mag[pyc, pxc] * inside, ang[pyc, pxc], ox, oy


def _orientations(mag, ang, x, y, sig):
    """Dominant orientations (radians) per keypoint, possibly several each."""
    n = len(x)
    if n == 0:
        return np.zeros(0, int), np.zeros(0)
    sig_w = ORI_SIGMA_FACTOR * sig
    radius = int(np.ceil(ORI_RADIUS_FACTOR * sig_w.max()))
    cx = np.rint(x).astype(int)
    cy = np.rint(y).astype(int)
    m, a, ox, oy = _patch(mag, ang, cx, cy, radius)
    r2 = ox[None] ** 2 + oy[None] ** 2
    wgt = np.exp(-r2 / (2.0 * sig_w[:, None, None] ** 2)) * (r2 <= (ORI_RADIUS_FACTOR * sig_w[:, None, None]) ** 2)
    b = np.floor(ORI_BINS * (a + np.pi) / (2 * np.pi)).astype(int) % ORI_BINS
    flat = (np.arange(n)[:, None, None] * ORI_BINS + b).ravel()
    hist = np.bincount(flat, weights=(m * wgt).ravel(), minlength=n * ORI_BINS).reshape(n, ORI_BINS)
    # circular smoothing
    kern = np.array([1, 4, 6, 4, 1]) / 16.0
    hist = sum(kern[i] * np.roll(hist, i - 2, axis=1) for i in range(5))
    left = np.roll(hist, 1, axis=1)
    right = np.roll(hist, -1, axis=1)
    peak = (hist > left) & (hist > right) & (hist >= ORI_PEAK_RATIO * hist.max(axis=1, keepdims=True))
    peak &= hist > 0
    kp_idx, bins = np.nonzero(peak)
    l, c, r = left[kp_idx, bins], hist[kp_idx, bins], right[kp_idx, bins]
    interp = bins + 0.5 * (l - r) / (l - 2 * c + r)
    theta = (interp + 0.5) * 2 * np.pi / ORI_BINS - np.pi
    return kp_idx, np.mod(theta + np.pi, 2 * np.pi) - np.pi


def _descriptors(mag, ang, x, y, sig, theta):
    """4x4x8 orientation-histogram descriptors, trilinearly interpolated."""
    n = len(x)
    out = np.zeros((n, DESC_WIDTH * DESC_WIDTH * DESC_BINS))
    if n == 0:
        return out
    hist_w = DESC_SCALE_FACTOR * sig
    radius = int(np.ceil(hist_w.max() * np.sqrt(2) * (DESC_WIDTH + 1) * 0.5))
    cx = np.rint(x).astype(int)
    cy = np.rint(y).astype(int)
    m, a, ox, oy = _patch(mag, ang, cx, cy, radius)
    # sub-pixel centre correction
    dx = ox[None] - (x - cx)[:, None, None]
    dy = oy[None] - (y - cy)[:, None, None]
    cos_t = np.cos(theta)[:, None, None]
    sin_t = np.sin(theta)[:, None, None]
    hw = hist_w[:, None, None]
    # rotate into the keypoint frame, in units of histogram cells
    rx = (cos_t * dx + sin_t * dy) / hw
    ry = (-sin_t * dx + cos_t * dy) / hw
    rbin = ry + DESC_WIDTH / 2 - 0.5
    cbin = rx + DESC_WIDTH / 2 - 0.5
    obin = np.mod(a - theta[:, None, None], 2 * np.pi) * DESC_BINS / (2 * np.pi)
    wgt = m * np.exp(-(rx**2 + ry**2) / (2 * (0.5 * DESC_WIDTH) ** 2))
    valid = (rbin > -1) & (rbin < DESC_WIDTH) & (cbin > -1) & (cbin < DESC_WIDTH) & (wgt > 0)
    kp = np.broadcast_to(np.arange(n)[:, None, None], valid.shape)[valid]
    rb, cb, ob, wv = rbin[valid], cbin[valid], obin[valid], wgt[valid]
    r0 = np.floor(rb).astype(int)
    c0 = np.floor(cb).astype(int)
    o0 = np.floor(ob).astype(int)
    fr, fc, fo = rb - r0, cb - c0, ob - o0
    size = DESC_WIDTH * DESC_WIDTH * DESC_BINS
    acc = np.zeros(n * size)
    for ir in (0, 1):
        wr = fr if ir else 1 - fr
        rr = r0 + ir
        for ic in (0, 1):
            wc = fc if ic else 1 - fc
            cc = c0 + ic
            ok = (rr >= 0) & (rr < DESC_WIDTH) & (cc >= 0) & (cc < DESC_WIDTH)
            for io in (0, 1):
                wo = fo if io else 1 - fo
                oo = (o0 + io) % DESC_BINS
                flat = kp * size + (rr * DESC_WIDTH + cc) * DESC_BINS + oo
                np.add.at(acc, flat[ok], (wv * wr * wc * wo)[ok])
    out = acc.reshape(n, size)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    out = np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-12)
    out = np.minimum(out, DESC_MAG_CLIP)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-12)


def detect_features(image: np.ndarray, config: SiftConfig = SiftConfig(), mask: np.ndarray | None = None):
    """Detect keypoints and compute 128-d descriptors.

    Args:
        image: grayscale or RGB array, any numeric dtype (8-bit range assumed
            for integer input).
        config: detector parameters.
        mask: optional boolean array; keypoints whose rounded position falls
            outside it are discarded.

    Returns:
        ``(KeypointSet, descriptors)`` sorted by response, strongest first.

    Raises:
        ImageTooSmallError: if the smaller image side is below 32 px.
    """
    image = np.asarray(image)
    if min(image.shape[:2]) < MIN_IMAGE_SIZE:
        raise ImageTooSmallError(f"image must be at least {MIN_IMAGE_SIZE} px on each side")
    gray = to_luma(image) / 255.0
    cfg = config
    gauss, dog = build_pyramids(gray, cfg)
    s_count = cfg.scales_per_octave

    cols = {k: [] for k in ("xy", "scale", "ori", "resp", "oct", "desc")}
    for o, (g, d) in enumerate(zip(gauss, dog)):
        x, y, layer, value = _localize(d, cfg)
        if len(x) == 0:
            continue
        sig = cfg.sigma * 2.0 ** (layer / s_count)
        li = np.clip(np.rint(layer).astype(int), 1, s_count)
        for lvl in np.unique(li):
            sel = np.flatnonzero(li == lvl)
            mag, ang = _gradients(g[lvl])
            kp_idx, theta = _orientations(mag, ang, x[sel], y[sel], sig[sel])
            if len(kp_idx) == 0:
                continue
            idx = sel[kp_idx]
            desc = np.concatenate(
                [
                    _descriptors(mag, ang, x[idx[b : b + BATCH]], y[idx[b : b + BATCH]],
                                 sig[idx[b : b + BATCH]], theta[b : b + BATCH])
                    for b in range(0, len(idx), BATCH)
                ]
            )
            scale = 2.0**o
            cols["xy"].append(np.stack([x[idx] * scale, y[idx] * scale], axis=1))
            cols["scale"].append(sig[idx] * scale)
            cols["ori"].append(theta)
            cols["resp"].append(np.abs(value[idx]))
            cols["oct"].append(np.full(len(idx), o))
            cols["desc"].append(desc)

    if not cols["xy"]:
        return KeypointSet.empty(), np.zeros((0, DESC_WIDTH * DESC_WIDTH * DESC_BINS))
    kps = KeypointSet(
        np.concatenate(cols["xy"]),
        np.concatenate(cols["scale"]),
        np.concatenate(cols["ori"]),
        np.concatenate(cols["resp"]),
        np.concatenate(cols["oct"]),
    )
    desc = np.concatenate(cols["desc"])
    h, w = gray.shape
    keep = (kps.xy[:, 0] >= 0) & (kps.xy[:, 0] <= w - 1) & (kps.xy[:, 1] >= 0) & (kps.xy[:, 1] <= h - 1)
    if mask is not None:
        ix = np.clip(np.rint(kps.xy[:, 0]).astype(int), 0, w - 1)
        iy = np.clip(np.rint(kps.xy[:, 1]).astype(int), 0, h - 1)
        keep &= np.asarray(mask, dtype=bool)[iy, ix]
    order = np.flatnonzero(keep)
    order = order[np.lexsort((order, -kps.response[order]))]
    if cfg.max_features is not None:
        order = order[: cfg.max_features]
    logger.debug("detected %d keypoints", len(order))
    return kps.subset(order), desc[order]
