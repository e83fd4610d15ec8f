#!/usr/bin/env python3
"""
Config helper for WarpRF experiments

Experiments are described by a nested JSON file. Every section maps onto a frozen
dataclass below; unknown keys are rejected and every problem names its dotted field.
"""
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import numpy as np
from dotenv import load_dotenv

from helpers.models import ConfigError

OUTPUT_DIR_ENV = "WARPRF_OUTPUT_DIR"

DEFAULTS = {
    "output_dir": "warprf_output",
    "seed": 0,
    "threads": 1,
}

Vec3 = Tuple[float, float, float]


def _require(condition: bool, name: str, detail: str) -> None:
    if not condition:
        raise ConfigError(detail, field=name)


def _one_of(value: str, choices: Tuple[str, ...], name: str) -> None:
    _require(value in choices, name, f"must be one of {', '.join(choices)}, got {value!r}")


@dataclass(frozen=True)
class CameraConfig:
    width: int = 64
    height: int = 64
    fx: float = 64.0
    fy: float = 64.0
    cx: Optional[float] = None  # image center when omitted
    cy: Optional[float] = None

    def __post_init__(self):
        _require(self.width >= 1, "width", "must be at least 1")
        _require(self.height >= 1, "height", "must be at least 1")
        _require(self.fx > 0, "fx", "focal length must be positive")
        _require(self.fy > 0, "fy", "focal length must be positive")
        if self.cx is not None:
            _require(0 <= self.cx < self.width, "cx", "principal point must lie inside the image")
        if self.cy is not None:
            _require(0 <= self.cy < self.height, "cy", "principal point must lie inside the image")


@dataclass(frozen=True)
class PoseConfig:
    """One explicit camera: either eye/look_at/up or a camera-to-world rotation and translation."""
    id: str
    eye: Optional[Vec3] = None
    look_at: Vec3 = (0.0, 0.0, 0.0)
    up: Vec3 = (0.0, 0.0, 1.0)
    rotation: Optional[Tuple[Vec3, Vec3, Vec3]] = None
    translation: Optional[Vec3] = None

    def __post_init__(self):
        _require(bool(self.id), "id", "must not be empty")
        explicit = self.rotation is not None or self.translation is not None
        _require(explicit != (self.eye is not None), "eye", "give either eye or rotation+translation")
        if explicit:
            _require(self.rotation is not None and self.translation is not None, "rotation",
                     "rotation and translation go together")
            rotation = np.array(self.rotation, dtype=np.float64)
            _require(np.max(np.abs(rotation.T @ rotation - np.eye(3))) < 1e-9 and abs(np.linalg.det(rotation) - 1.0) <= 1e-9,
                     "rotation", "must be orthonormal with determinant 1")


VIEW_SET_KINDS = ("ring", "sphere", "explicit")


@dataclass(frozen=True)
class ViewSetConfig:
    kind: str = "ring"
    count: int = 8
    radius: float = 3.0
    height: float = 0.0
    look_at: Vec3 = (0.0, 0.0, 0.0)
    phase: float = 0.0
    min_elevation: Optional[float] = None
    prefix: str = "view"
    poses: Tuple[PoseConfig, ...] = ()

    def __post_init__(self):
        _one_of(self.kind, VIEW_SET_KINDS, "kind")
        if self.kind == "explicit":
            _require(len(self.poses) >= 1, "poses", "an explicit view set needs at least one pose")
            ids = [pose.id for pose in self.poses]
            _require(len(set(ids)) == len(ids), "poses", "pose ids must be unique")
        else:
            _require(self.count >= 1, "count", "must be at least 1")
            _require(self.radius > 0, "radius", "must be positive")


PRIMITIVE_KINDS = ("sphere", "box", "plane")


@dataclass(frozen=True)
class PrimitiveConfig:
    kind: str
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = 1.0
    minimum: Vec3 = (-0.5, -0.5, -0.5)
    maximum: Vec3 = (0.5, 0.5, 0.5)
    normal: Vec3 = (0.0, 0.0, 1.0)
    offset: float = 0.0
    extent: Optional[float] = None
    albedo: Vec3 = (0.8, 0.8, 0.8)
    checker_scale: Optional[float] = None
    checker_albedo: Vec3 = (0.2, 0.2, 0.2)

    def __post_init__(self):
        _one_of(self.kind, PRIMITIVE_KINDS, "kind")
        _require(all(0.0 <= c <= 1.0 for c in self.albedo), "albedo", "colors must lie in [0, 1]")
        _require(all(0.0 <= c <= 1.0 for c in self.checker_albedo), "checker_albedo", "colors must lie in [0, 1]")
        if self.kind == "sphere":
            _require(self.radius > 0, "radius", "must be positive")
        if self.kind == "box":
            _require(all(lo < hi for lo, hi in zip(self.minimum, self.maximum)), "minimum",
                     "must be below maximum on every axis")
        if self.kind == "plane":
            _require(abs(sum(c * c for c in self.normal) - 1.0) < 1e-9, "normal", "must have unit length")
            if self.extent is not None:
                _require(self.extent > 0, "extent", "must be positive")
        if self.checker_scale is not None:
            _require(self.checker_scale > 0, "checker_scale", "must be positive")


@dataclass(frozen=True)
class SceneConfig:
    primitives: Tuple[PrimitiveConfig, ...] = ()
    background: Vec3 = (1.0, 1.0, 1.0)
    light_direction: Vec3 = (0.3, 0.5, -1.0)
    ambient: float = 0.35
    checkpoint: Optional[str] = None  # voxel field rendered instead of primitives

    def __post_init__(self):
        _require(all(0.0 <= c <= 1.0 for c in self.background), "background", "colors must lie in [0, 1]")
        _require(0.0 <= self.ambient <= 1.0, "ambient", "must lie in [0, 1]")
        _require(any(self.light_direction), "light_direction", "must be non-zero")


REGION_KINDS = ("all", "image_rect", "world_box", "world_sector")


@dataclass(frozen=True)
class RegionConfig:
    kind: str = "all"
    rect: Tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    box_min: Vec3 = (0.0, 0.0, 0.0)
    box_max: Vec3 = (0.0, 0.0, 0.0)
    center: Vec3 = (0.0, 0.0, 0.0)
    azimuth_start: float = 0.0
    azimuth_end: float = 0.0

    def __post_init__(self):
        _one_of(self.kind, REGION_KINDS, "kind")
        if self.kind == "image_rect":
            u0, v0, u1, v1 = self.rect
            _require(0.0 <= u0 < u1 <= 1.0 and 0.0 <= v0 < v1 <= 1.0, "rect", "must be a normalized u0, v0, u1, v1 box")


@dataclass(frozen=True)
class DegradationConfig:
    region: RegionConfig = field(default_factory=RegionConfig)
    depth_bias: float = 0.0
    depth_noise_sigma: float = 0.0
    color_noise_sigma: float = 0.0
    view_ids: Optional[Tuple[str, ...]] = None
    deleted_primitives: Tuple[int, ...] = ()

    def __post_init__(self):
        _require(self.depth_noise_sigma >= 0, "depth_noise_sigma", "must be non-negative")
        _require(self.color_noise_sigma >= 0, "color_noise_sigma", "must be non-negative")
        _require(all(i >= 0 for i in self.deleted_primitives), "deleted_primitives", "indices must be non-negative")


@dataclass(frozen=True)
class VoxelConfig:
    resolution: Tuple[int, int, int] = (24, 24, 24)
    bounds_min: Vec3 = (-1.5, -1.5, -1.5)
    bounds_max: Vec3 = (1.5, 1.5, 1.5)
    step: float = 0.05
    near: float = 0.5
    far: float = 6.0
    init_density: float = -2.0
    init_noise: float = 0.01
    learning_rate: float = 0.5
    ray_batch: int = 1024
    momentum: float = 0.0
    weight_threshold: float = 0.5
    normalize_depth: bool = False

    def __post_init__(self):
        _require(all(n >= 2 for n in self.resolution), "resolution", "every axis needs at least 2 vertices")
        _require(all(lo < hi for lo, hi in zip(self.bounds_min, self.bounds_max)), "bounds_min", "must be below bounds_max")
        _require(self.step > 0, "step", "must be positive")
        _require(0 <= self.near < self.far, "near", "must satisfy 0 <= near < far")
        _require(self.far - self.near >= self.step, "far", "the near..far interval must hold at least one sample")
        _require(self.learning_rate > 0, "learning_rate", "must be positive")
        _require(self.ray_batch >= 1, "ray_batch", "must be at least 1")
        _require(0.0 <= self.momentum < 1.0, "momentum", "must lie in [0, 1)")
        _require(0.0 < self.weight_threshold <= 1.0, "weight_threshold", "must lie in (0, 1]")


BACKEND_KINDS = ("oracle", "degraded", "voxel")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "oracle"
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    voxel: VoxelConfig = field(default_factory=VoxelConfig)
    cache_size: int = 256  # memoized renders; 0 disables the memo

    def __post_init__(self):
        _one_of(self.kind, BACKEND_KINDS, "kind")
        _require(self.cache_size >= 0, "cache_size", "must be non-negative")


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "warprf_image"
    seed: Optional[int] = None  # experiment seed when omitted

    def __post_init__(self):
        _one_of(self.kind, ("warprf_image", "warprf_depth", "random", "farthest"), "kind")
        if self.seed is not None:
            _require(self.seed >= 0, "seed", "must be non-negative")


@dataclass(frozen=True)
class RefineConfig:
    enabled: bool = False
    k: int = 3
    radius: float = 0.2
    iters: int = 5

    def __post_init__(self):
        _require(self.k >= 1, "k", "must be at least 1")
        _require(self.radius > 0, "radius", "must be positive")
        _require(self.iters >= 1, "iters", "must be at least 1")


@dataclass(frozen=True)
class LoopSettings:
    rounds: int = 1
    fit_budget_per_round: int = 0
    num_initial: int = 4
    initial_view_ids: Tuple[str, ...] = ()
    warm_start: bool = True
    refine: RefineConfig = field(default_factory=RefineConfig)

    def __post_init__(self):
        _require(self.rounds >= 1, "rounds", "must be at least 1")
        _require(self.fit_budget_per_round >= 0, "fit_budget_per_round", "must be non-negative")
        _require(self.num_initial >= 1, "num_initial", "must be at least 1")


@dataclass(frozen=True)
class UncertaintyConfig:
    mode: str = "image"
    penalty: float = 1.0
    nearest_k: Optional[int] = None

    def __post_init__(self):
        _one_of(self.mode, ("pixel", "image"), "mode")
        _require(self.penalty >= 0, "penalty", "must be non-negative")
        if self.nearest_k is not None:
            _require(self.nearest_k >= 1, "nearest_k", "must be at least 1")


METRIC_NAMES = ("psnr", "ssim", "depth_mae", "cloud")


@dataclass(frozen=True)
class MetricsConfig:
    names: Tuple[str, ...] = METRIC_NAMES
    num_bins: int = 100
    cloud_threshold: float = 0.05

    def __post_init__(self):
        for name in self.names:
            _one_of(name, METRIC_NAMES, "names")
        _require(self.num_bins >= 2, "num_bins", "must be at least 2")
        _require(self.cloud_threshold > 0, "cloud_threshold", "must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    camera: CameraConfig = field(default_factory=CameraConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    candidates: ViewSetConfig = field(default_factory=lambda: ViewSetConfig(kind="sphere", count=24, prefix="cand"))
    initial: Optional[ViewSetConfig] = None  # disjoint from candidates when given
    eval: ViewSetConfig = field(default_factory=lambda: ViewSetConfig(count=4, phase=math.pi / 8, prefix="eval"))
    backend: BackendConfig = field(default_factory=BackendConfig)
    ground_truth: BackendConfig = field(default_factory=BackendConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    loop: LoopSettings = field(default_factory=LoopSettings)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output_dir: str = DEFAULTS["output_dir"]
    seed: int = DEFAULTS["seed"]
    threads: int = DEFAULTS["threads"]

    def __post_init__(self):
        _require(self.seed >= 0, "seed", "must be non-negative")
        _require(self.threads >= 1, "threads", "must be at least 1")
        _require(self.ground_truth.kind != "voxel" or self.scene.checkpoint is not None, "ground_truth.kind",
                 "a voxel ground truth needs scene.checkpoint")
        _require(self.backend.kind != "degraded" or not self.scene.checkpoint, "backend.kind",
                 "degradation applies to analytic scenes only")
        if self.scene.checkpoint is None:
            for index in self.backend.degradation.deleted_primitives:
                _require(index < len(self.scene.primitives), "backend.degradation.deleted_primitives",
                         f"no primitive at index {index}")

    @property
    def policy_seed(self) -> int:
        return self.seed if self.policy.seed is None else self.policy.seed


# Strict conversion from parsed JSON


def _convert(tp: Any, value: Any, path: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        options = [arg for arg in get_args(tp) if arg is not type(None)]
        if value is None:
            return None
        return _convert(options[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError("expected a list", field=path)
        args = get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], item, f"{path}[{i}]") for i, item in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"expected {len(args)} entries, got {len(value)}", field=path)
        return tuple(_convert(arg, item, f"{path}[{i}]") for i, (arg, item) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", field=path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", field=path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", field=path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError("expected a string", field=path)
        return value
    raise ConfigError(f"unsupported field type {tp!r}", field=path)


def _build(cls, data: Any, path: str = ""):
    prefix = f"{path}." if path else ""
    if not isinstance(data, dict):
        raise ConfigError("expected an object", field=path or None)
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError("unknown key", field=f"{prefix}{unknown[0]}")
    kwargs = {name: _convert(hints[name], value, f"{prefix}{name}") for name, value in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise exc.under(path) if path else exc
    except TypeError as exc:
        # missing required keys
        raise ConfigError(str(exc), field=path or None)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, column=exc.colno)
    if isinstance(data, dict):
        for key, value in DEFAULTS.items():
            data.setdefault(key, value)
    return _build(ExperimentConfig, data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    config = parse_config(path.read_text(encoding="utf-8"))
    checkpoint = config.scene.checkpoint
    if checkpoint is not None:
        resolved = Path(checkpoint) if Path(checkpoint).is_absolute() else path.parent / checkpoint
        if not resolved.exists():
            raise ConfigError(f"checkpoint {checkpoint} does not exist", field="scene.checkpoint")
        config = dataclasses.replace(config, scene=dataclasses.replace(config.scene, checkpoint=str(resolved)))
    return config


def serialize_config(config: ExperimentConfig) -> str:
    return json.dumps(dataclasses.asdict(config), indent=2, sort_keys=True) + "\n"


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(serialize_config(config))


def resolve_output_directory(config: ExperimentConfig, override: Optional[str] = None) -> Path:
    """--out beats WARPRF_OUTPUT_DIR (also read from .env) beats the config value."""
    load_dotenv()
    return Path(override or os.environ.get(OUTPUT_DIR_ENV) or config.output_dir)


def ensure_output_directory(config: ExperimentConfig, override: Optional[str] = None) -> str:
    out_dir = resolve_output_directory(config, override)
    out_dir.mkdir(parents=True, exist_ok=True)
    return str(out_dir)
