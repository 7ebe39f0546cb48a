"""Image and point-cloud codecs, atomic writes and run manifests."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import io
import json
import os
import platform
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .errors import DataIOError

MANIFEST_VERSION = 1


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise DataIOError(f"{path}: {exc}") from exc


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Any Pillow-readable raster as ``(H, W, 3)`` uint8 RGB."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except FileNotFoundError as exc:
        raise DataIOError(f"{path}: no such image file") from exc
    except OSError as exc:
        raise DataIOError(f"{path}: cannot read image ({exc})") from exc


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Lossless PNG; boolean masks are written as 0/255 grayscale."""
    a = np.asarray(image)
    if a.dtype == bool:
        im = Image.fromarray(a.astype(np.uint8) * 255, mode="L")
    else:
        im = Image.fromarray(np.ascontiguousarray(a.astype(np.uint8)))
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def read_point_cloud(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray | None]:
    """Rows ``x, y, z[, r, g, b]`` from ``.npy`` or ``.csv``; returns ``(xyz, rgb or None)``."""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            arr = np.load(path, allow_pickle=False)
        elif path.suffix in (".csv", ".txt"):
            text = path.read_text()
            lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
            if lines and any(c.isalpha() for c in lines[0]):
                lines = lines[1:]  # header row
            arr = np.array([[float(v) for v in ln.split(",")] for ln in lines]) if lines else np.zeros((0, 3))
        else:
            raise DataIOError(f"{path}: unsupported point cloud format (use .npy or .csv)")
    except FileNotFoundError as exc:
        raise DataIOError(f"{path}: no such point cloud file") from exc
    except (OSError, ValueError) as exc:
        raise DataIOError(f"{path}: cannot parse point cloud ({exc})") from exc
    arr = np.asarray(arr, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 3)), None
    if arr.ndim != 2 or arr.shape[1] not in (3, 6):
        raise DataIOError(f"{path}: expected N x 3 or N x 6 rows, got shape {arr.shape}")
    xyz = arr[:, :3]
    rgb = np.clip(np.rint(arr[:, 3:6]), 0, 255).astype(np.uint8) if arr.shape[1] == 6 else None
    return xyz, rgb


def write_point_cloud(path: str | os.PathLike, xyz: np.ndarray, rgb: np.ndarray | None = None) -> None:
    path = Path(path)
    cols = [np.asarray(xyz, dtype=float).reshape(-1, 3)]
    if rgb is not None:
        cols.append(np.asarray(rgb, dtype=float).reshape(-1, 3))
    arr = np.concatenate(cols, axis=1)
    if path.suffix == ".npy":
        buf = io.BytesIO()
        np.save(buf, arr, allow_pickle=False)
        atomic_write_bytes(path, buf.getvalue())
    elif path.suffix == ".csv":
        header = "x,y,z" + (",r,g,b" if rgb is not None else "")
        rows = [",".join(repr(float(v)) for v in row) for row in arr]
        atomic_write_text(path, "\n".join([header, *rows]) + "\n")
    else:
        raise DataIOError(f"{path}: unsupported point cloud format (use .npy or .csv)")


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types for dataclass/enum/numpy-laden structures."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, Path):
        return str(obj)
    return obj


def stable_json(obj: Any, indent: int | None = 2) -> str:
    return json.dumps(to_jsonable(obj), indent=indent, sort_keys=True, ensure_ascii=True)


def content_hash(obj: Any) -> str:
    return hashlib.sha256(stable_json(obj, indent=None).encode()).hexdigest()


def file_digest(path: str | os.PathLike) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc


def versions() -> dict[str, str]:
    import scipy

    from . import __version__

    return {
        "viewstitch": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_run_manifest(
    path: str | os.PathLike,
    command: str,
    argv: list[str],
    inputs: dict[str, str | os.PathLike],
    config: Any,
    seed: int | None,
    outputs: dict[str, str | os.PathLike],
    extra: dict | None = None,
) -> dict:
    """Write a reproducibility manifest; timestamps are deliberately omitted.

    Paths are recorded relative to the manifest's directory when possible,
    together with SHA-256 digests of the files.
    """
    base = Path(path).resolve().parent

    def rel(p) -> str:
        p = Path(p).resolve()
        try:
            return os.path.relpath(p, base)
        except ValueError:
            return str(p)

    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config": to_jsonable(config),
        "config_hash": content_hash(config),
        "inputs": {k: {"path": rel(p), "sha256": file_digest(p)} for k, p in sorted(inputs.items())},
        "outputs": {k: {"path": rel(p), "sha256": file_digest(p)} for k, p in sorted(outputs.items())},
        "versions": versions(),
        "threads": os.environ.get("VIEWSTITCH_THREADS", "1"),
    }
    if extra:
        manifest["details"] = to_jsonable(extra)
    atomic_write_text(path, stable_json(manifest) + "\n")
    return manifest
