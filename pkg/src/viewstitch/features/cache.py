"""Binary keypoint cache.

Layout (little endian): magic ``b"VSKP"``, ``uint32`` version, ``uint32``
keypoint count, ``uint32`` descriptor length, then one record per keypoint:
``float64`` x, y, scale, orientation, response, ``int32`` octave and the
descriptor as ``float32`` values.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import DataIOError
from .sift import KeypointSet

MAGIC = b"VSKP"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [
            ("x", "<f8"),
            ("y", "<f8"),
            ("scale", "<f8"),
            ("orientation", "<f8"),
            ("response", "<f8"),
            ("octave", "<i4"),
            ("desc", "<f4", (dim,)),
        ]
    )


def save_keypoints(path: str | os.PathLike, kps: KeypointSet, desc: np.ndarray) -> None:
    desc = np.asarray(desc)
    dim = desc.shape[1] if desc.ndim == 2 else 128
    rec = np.zeros(len(kps), dtype=_record_dtype(dim))
    rec["x"], rec["y"] = kps.xy[:, 0], kps.xy[:, 1]
    rec["scale"] = kps.scale
    rec["orientation"] = kps.orientation
    rec["response"] = kps.response
    rec["octave"] = kps.octave
    if len(kps):
        rec["desc"] = desc
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(kps), dim))
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def load_keypoints(path: str | os.PathLike) -> tuple[KeypointSet, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataIOError(f"{path}: truncated keypoint cache")
    magic, version, count, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise DataIOError(f"{path}: not a keypoint cache (magic {magic!r}, version {version})")
    dt = _record_dtype(dim)
    if len(raw) != _HEADER.size + count * dt.itemsize:
        raise DataIOError(f"{path}: size does not match header")
    rec = np.frombuffer(raw, dtype=dt, offset=_HEADER.size, count=count)
    kps = KeypointSet(
        np.stack([rec["x"], rec["y"]], axis=1).astype(float),
        rec["scale"].astype(float),
        rec["orientation"].astype(float),
        rec["response"].astype(float),
        rec["octave"].astype(int),
    )
    return kps, rec["desc"].astype(float).reshape(count, dim)
