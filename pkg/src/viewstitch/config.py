"""Rig configuration files (YAML).

Angles are written in degrees; ``translation`` is the camera centre in world
coordinates (x right, y backward, z down, metres). Every section other than
``cameras`` is optional and falls back to the library defaults, which
:func:`serialize_rig_config` writes out in full.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .align import ClusterConfig
from .datagen import PoseSamplingConfig
from .errors import ConfigError, DataIOError
from .features import RansacConfig, SelectionConfig
from .fusion import FusionConfig
from .geometry import CameraModel
from .pipeline import FavsConfig
from .synth import EnvKind, Environment


class _Map(dict):
    """Mapping that remembers the source line of itself and of each key."""

    line: int = 0

    def __init__(self):
        super().__init__()
        self.lines: dict[Any, int] = {}


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader: _Loader, node: yaml.MappingNode) -> _Map:
    out = _Map()
    out.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        line = key_node.start_mark.line + 1
        if key in out:
            raise ConfigError(f"line {line}: duplicate key '{key}'")
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = line
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


@dataclass(frozen=True)
class CameraSpec:
    name: str
    f: float
    cx: float
    cy: float
    theta: float  # degrees, positive turns right
    phi: float  # degrees, positive looks up
    translation: tuple[float, float, float]
    width: int
    height: int
    primary: bool = False

    def model(self) -> CameraModel:
        return CameraModel.from_angles(
            self.name,
            self.f,
            self.cx,
            self.cy,
            np.deg2rad(self.theta),
            np.deg2rad(self.phi),
            self.translation,
            self.width,
            self.height,
            self.primary,
        )


@dataclass(frozen=True)
class TargetSpec:
    """A novel pose; unset optics and position are taken from ``anchor``."""

    name: str
    theta: float
    phi: float = 0.0
    anchor: str | None = None
    translation: tuple[float, float, float] | None = None
    f: float | None = None
    cx: float | None = None
    cy: float | None = None
    width: int | None = None
    height: int | None = None


@dataclass(frozen=True)
class ClusterSpec:
    eps: float = 30.0
    min_samples: int = 5
    scale_with_resolution: bool = True


@dataclass(frozen=True)
class MatchingSpec:
    ratio: float = 0.75
    min_matches: int = 10
    t_low: float = 5.0
    t_high: float = 30.0


@dataclass(frozen=True)
class AlignmentSpec:
    beta: float = 0.5
    enabled: bool = True


@dataclass(frozen=True)
class RigConfig:
    cameras: tuple[CameraSpec, ...]
    targets: tuple[TargetSpec, ...] = ()
    fusion: FusionConfig = FusionConfig()
    matching: MatchingSpec = MatchingSpec()
    ransac: RansacConfig = RansacConfig()
    cluster: ClusterSpec = ClusterSpec()
    alignment: AlignmentSpec = AlignmentSpec()
    sampling: PoseSamplingConfig = PoseSamplingConfig()
    environment: Environment = field(default_factory=Environment)

    def camera_models(self) -> list[CameraModel]:
        return [c.model() for c in self.cameras]

    def camera(self, name: str) -> CameraSpec:
        for c in self.cameras:
            if c.name == name:
                return c
        raise ConfigError(f"unknown camera '{name}'")

    def target_model(self, name: str) -> CameraModel:
        """Resolve a target by name; a camera name selects that camera's own pose."""
        for t in self.targets:
            if t.name == name:
                return _target_model(t, self)
        for c in self.cameras:
            if c.name == name:
                return c.model()
        known = [t.name for t in self.targets] + [c.name for c in self.cameras]
        raise ConfigError(f"unknown target '{name}' (known: {', '.join(known)})")

    def favs_config(self, seed: int = 0, geometric_only: bool = False) -> FavsConfig:
        m = self.matching
        return FavsConfig(
            ratio=m.ratio,
            ransac=self.ransac,
            selection=SelectionConfig(m.min_matches, m.t_low, m.t_high),
            cluster=None
            if self.cluster.scale_with_resolution
            else ClusterConfig(self.cluster.eps, self.cluster.min_samples),
            beta=self.alignment.beta,
            fusion=self.fusion,
            geometric_only=geometric_only,
            align_objects=self.alignment.enabled,
            seed=seed,
        )


def _target_model(t: TargetSpec, rig: RigConfig) -> CameraModel:
    base = rig.camera(t.anchor) if t.anchor else None

    def pick(attr):
        v = getattr(t, attr)
        if v is None and base is not None:
            v = getattr(base, attr)
        if v is None:
            raise ConfigError(f"target '{t.name}': '{attr}' is required without an anchor camera")
        return v

    return CameraModel.from_angles(
        t.name,
        pick("f"),
        pick("cx"),
        pick("cy"),
        np.deg2rad(t.theta),
        np.deg2rad(t.phi),
        pick("translation"),
        pick("width"),
        pick("height"),
    )


def _where(m: _Map, key: str | None, path: str) -> str:
    line = m.lines.get(key, m.line) if key is not None else m.line
    return f"line {line}: {path}"


def _coerce(value, default, where: str, name: str):
    """Convert YAML scalars to the type implied by the dataclass default."""
    probe = default
    try:
        if isinstance(probe, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(probe, int) and not isinstance(probe, bool):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(probe, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(probe, tuple):
            if not isinstance(value, (list, tuple)) or (probe and len(value) != len(probe)):
                raise TypeError
            return tuple(float(v) for v in value)
        if isinstance(probe, EnvKind):
            return EnvKind(value)
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: invalid value {value!r} for '{name}'") from None


def _section(raw, cls, path: str, required: tuple[str, ...] = (), overrides: dict | None = None):
    if raw is None:
        raw = _Map()
    if not isinstance(raw, dict):
        raise ConfigError(f"line {getattr(raw, 'line', '?')}: {path}: expected a mapping")
    if not isinstance(raw, _Map):
        m = _Map()
        m.update(raw)
        raw = m
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in fields:
            raise ConfigError(f"{_where(raw, key, path)}: unknown field '{key}'")
    for key in required:
        if key not in raw:
            raise ConfigError(f"{_where(raw, None, path)}: missing required field '{key}'")
    kwargs = {}
    hints = overrides or {}
    for name, f in fields.items():
        if name not in raw:
            continue
        value = raw[name]
        if name in hints:
            default = hints[name]
        elif f.default is not dataclasses.MISSING:
            default = f.default
        else:
            default = None
        if default is None:
            kwargs[name] = value
        else:
            kwargs[name] = _coerce(value, default, _where(raw, name, path), name)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(raw, None, path)}: {exc}") from None


_CAMERA_TYPES = {
    "name": "",
    "f": 0.0,
    "cx": 0.0,
    "cy": 0.0,
    "theta": 0.0,
    "phi": 0.0,
    "translation": (0.0, 0.0, 0.0),
    "width": 0,
    "height": 0,
}
_TARGET_TYPES = dict(_CAMERA_TYPES)
_REQUIRED_CAMERA = tuple(_CAMERA_TYPES)
_SECTIONS = {
    "fusion": FusionConfig,
    "matching": MatchingSpec,
    "ransac": RansacConfig,
    "cluster": ClusterSpec,
    "alignment": AlignmentSpec,
    "sampling": PoseSamplingConfig,
    "environment": Environment,
}


def _check_name(value, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{where}: 'name' must be a nonempty string")
    return value


def parse_rig_config(text: str) -> RigConfig:
    """Parse and validate a rig configuration.

    Raises:
        ConfigError: on malformed YAML, unknown or missing fields and
            invariant violations; the message carries the line number.
    """
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}malformed configuration ({getattr(exc, 'problem', exc)})") from None
    if not isinstance(raw, _Map):
        raise ConfigError("line 1: configuration must be a mapping")
    allowed = {"cameras", "targets", *_SECTIONS}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{_where(raw, key, 'config')}: unknown field '{key}'")
    if "cameras" not in raw:
        raise ConfigError(f"{_where(raw, None, 'config')}: missing required field 'cameras'")
    cams_raw = raw["cameras"]
    if not isinstance(cams_raw, list) or not cams_raw:
        raise ConfigError(f"{_where(raw, 'cameras', 'cameras')}: expected a nonempty list of cameras")

    cameras = []
    seen: dict[str, int] = {}
    for i, c in enumerate(cams_raw):
        path = f"cameras[{i}]"
        if not isinstance(c, _Map):
            raise ConfigError(f"{_where(raw, 'cameras', path)}: expected a mapping")
        spec = _section(c, CameraSpec, path, _REQUIRED_CAMERA, _CAMERA_TYPES)
        _check_name(spec.name, _where(c, "name", path))
        if spec.name in seen:
            raise ConfigError(f"{_where(c, 'name', path)}: duplicate camera name '{spec.name}'")
        seen[spec.name] = i
        if spec.f <= 0 or spec.width <= 0 or spec.height <= 0:
            raise ConfigError(f"{_where(c, None, path)}: f, width and height must be positive")
        cameras.append(spec)
    primaries = [c.name for c in cameras if c.primary]
    if len(primaries) > 1:
        raise ConfigError(f"{_where(raw, 'cameras', 'cameras')}: at most one primary camera, got {primaries}")

    targets = []
    t_raw = raw.get("targets") or []
    if not isinstance(t_raw, list):
        raise ConfigError(f"{_where(raw, 'targets', 'targets')}: expected a list")
    for i, t in enumerate(t_raw):
        path = f"targets[{i}]"
        spec = _section(t, TargetSpec, path, ("name", "theta"), _TARGET_TYPES)
        _check_name(spec.name, _where(t, "name", path))
        if spec.anchor is not None and spec.anchor not in seen:
            raise ConfigError(f"{_where(t, 'anchor', path)}: unknown anchor camera '{spec.anchor}'")
        if spec.name in {x.name for x in targets}:
            raise ConfigError(f"{_where(t, 'name', path)}: duplicate target name '{spec.name}'")
        targets.append(spec)

    sections = {}
    for key, cls in _SECTIONS.items():
        if key in raw:
            sections[key] = _section(raw[key], cls, key)
    rig = RigConfig(tuple(cameras), tuple(targets), **sections)
    for t in rig.targets:
        _target_model(t, rig)  # surfaces missing optics early
    return rig


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, EnvKind):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def rig_config_dict(rig: RigConfig) -> dict:
    d = _plain(rig)
    d["targets"] = [{k: v for k, v in t.items() if v is not None} for t in d["targets"]]
    return d


def serialize_rig_config(rig: RigConfig) -> str:
    """YAML text with every default written out; parsing it returns an equal config."""
    return yaml.safe_dump(rig_config_dict(rig), sort_keys=False, default_flow_style=None)


def load_rig_config(path) -> RigConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc
    try:
        return parse_rig_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def rig_config_from_cameras(cameras: list[CameraModel], **sections) -> RigConfig:
    specs = []
    for c in cameras:
        a = c.angles
        specs.append(
            CameraSpec(
                c.name,
                float(c.intrinsics.f),
                float(c.intrinsics.cx),
                float(c.intrinsics.cy),
                float(np.rad2deg(a.theta)),
                float(np.rad2deg(a.phi)),
                tuple(float(v) for v in c.pose.translation),
                int(c.width),
                int(c.height),
                bool(c.primary),
            )
        )
    return RigConfig(tuple(specs), **sections)
