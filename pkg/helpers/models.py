from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

Vec3 = Tuple[float, float, float]


class WarpRFError(Exception):
    """Base class for every error raised by the toolkit."""


class PreconditionError(WarpRFError):
    pass


class ResolutionMismatchError(WarpRFError):
    pass


class NaNScoreError(WarpRFError):
    pass


class FileFormatError(WarpRFError):
    """Malformed or unsupported input file."""


class ImageFormatError(FileFormatError):
    pass


class PointCloudFormatError(FileFormatError):
    pass


class PFMFormatError(ImageFormatError):
    pass


class ConfigError(WarpRFError):
    """Configuration problem; `field` is the dotted path of the offending key when known."""
    def __init__(self, detail: str, field: Optional[str] = None, line: Optional[int] = None, column: Optional[int] = None):
        self.detail = detail
        self.field = field
        self.line = line
        self.column = column
        if line is not None:
            super().__init__(f"line {line}, column {column}: {detail}")
        elif field:
            super().__init__(f"{field}: {detail}")
        else:
            super().__init__(detail)

    def under(self, prefix: str) -> "ConfigError":
        return ConfigError(self.detail, field=f"{prefix}.{self.field}" if self.field else prefix)


class PoolExhaustedError(WarpRFError):
    def __init__(self, message: str, records: List["RoundRecord"]):
        super().__init__(message)
        self.records = records


# Geometry

@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise PreconditionError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise PreconditionError("image size must be at least 1x1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise PreconditionError("principal point must lie inside the image")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform: X_world = R @ X_cam + t."""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise PreconditionError("pose must be finite")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) >= 1e-9 or abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise PreconditionError("rotation must be orthonormal with determinant 1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at `eye` looking at `target`; camera axes x right, y down, z forward."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise PreconditionError("eye and target coincide")
        forward /= norm
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            # looking straight along the up axis
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]) if abs(up[1]) < 0.9 else np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return cls(np.stack([right, down, forward], axis=1), eye)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def relative_to(self, target: "Pose") -> "Pose":
        """Transform taking this camera's frame into `target`'s camera frame."""
        return target.inverse().compose(self)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation


@dataclass(frozen=True, eq=False)
class View:
    intrinsics: Intrinsics
    pose: Pose
    id: str

    @property
    def shape(self) -> Tuple[int, int]:
        return self.intrinsics.shape

    def with_pose(self, pose: Pose, id: Optional[str] = None) -> "View":
        return View(self.intrinsics, pose, self.id if id is None else id)

    def key(self) -> Tuple:
        return (self.id, self.pose.rotation.tobytes(), self.pose.translation.tobytes(), self.intrinsics)


@dataclass(eq=False)
class DepthMap:
    """Planar (camera-frame z) depth in meters with a validity mask."""
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ResolutionMismatchError("depth values and mask must be matching H×W arrays")
        checked = self.values[self.valid]
        if not np.all(np.isfinite(checked) & (checked > 0)):
            raise PreconditionError("valid depth must be finite and positive")

    @classmethod
    def invalid(cls, height: int, width: int) -> "DepthMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(eq=False)
class ImageBuffer:
    """H×W×3 color in [0, 1] with a validity mask."""
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 3 or self.values.shape[2] != 3 or self.values.shape[:2] != self.valid.shape:
            raise ResolutionMismatchError("image values must be H×W×3 with an H×W mask")
        checked = self.values[self.valid]
        if not np.all((checked >= 0.0) & (checked <= 1.0)):
            raise PreconditionError("valid colors must lie in [0, 1]")

    @classmethod
    def filled(cls, height: int, width: int, color) -> "ImageBuffer":
        values = np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)).copy()
        return cls(values, np.ones((height, width), dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape[:2]


# Analytic scenes

@dataclass(frozen=True)
class Checker:
    scale: float
    albedo: Vec3


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float
    albedo: Vec3 = (0.8, 0.8, 0.8)
    checker: Optional[Checker] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise PreconditionError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    minimum: Vec3
    maximum: Vec3
    albedo: Vec3 = (0.8, 0.8, 0.8)
    checker: Optional[Checker] = None

    def __post_init__(self):
        if not all(lo < hi for lo, hi in zip(self.minimum, self.maximum)):
            raise PreconditionError("box minimum must be below maximum on every axis")


@dataclass(frozen=True)
class Plane:
    """Points with normal·x = offset; `extent` is the half-size of the square patch around normal*offset."""
    normal: Vec3
    offset: float
    extent: Optional[float] = None
    albedo: Vec3 = (0.8, 0.8, 0.8)
    checker: Optional[Checker] = None

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.normal)) - 1.0) > 1e-9:
            raise PreconditionError("plane normal must have unit length")
        if self.extent is not None and not self.extent > 0:
            raise PreconditionError("plane extent must be positive")


@dataclass(frozen=True)
class Light:
    direction: Vec3 = (0.3, 0.5, -1.0)
    ambient: float = 0.35


@dataclass(frozen=True)
class AnalyticScene:
    primitives: Tuple = ()
    background: Vec3 = (1.0, 1.0, 1.0)
    light: Light = field(default_factory=Light)


@dataclass(frozen=True)
class Region:
    """Where a degradation applies.

    kinds: "all", "image_rect" (normalized u0, v0, u1, v1), "world_box" (box_min, box_max),
    "world_sector" (azimuth interval in radians around the vertical axis through `center`).
    """
    kind: str = "all"
    rect: Tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    box_min: Vec3 = (0.0, 0.0, 0.0)
    box_max: Vec3 = (0.0, 0.0, 0.0)
    center: Vec3 = (0.0, 0.0, 0.0)
    azimuth_start: float = 0.0
    azimuth_end: float = 0.0

    def __post_init__(self):
        if self.kind not in ("all", "image_rect", "world_box", "world_sector"):
            raise PreconditionError(f"unknown region kind {self.kind!r}")


@dataclass(frozen=True)
class DegradationSpec:
    region: Region = field(default_factory=Region)
    depth_bias: float = 0.0
    depth_noise_sigma: float = 0.0
    color_noise_sigma: float = 0.0
    seed: int = 0
    view_ids: Optional[Tuple[str, ...]] = None
    deleted_primitives: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.depth_noise_sigma < 0 or self.color_noise_sigma < 0:
            raise PreconditionError("noise sigmas must be non-negative")

    def applies_to(self, view: View) -> bool:
        return self.view_ids is None or view.id in self.view_ids


# Uncertainty

@dataclass(eq=False)
class UncertaintyMap:
    values: np.ndarray
    valid: np.ndarray
    contributing_count: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def total(self) -> float:
        return float(np.sum(self.values[self.valid]))


@dataclass(frozen=True)
class ViewScore:
    view_id: str
    score: float
    covered_fraction: float = 0.0


# Metrics

@dataclass(eq=False)
class SparsificationCurve:
    fractions: np.ndarray
    mae: np.ndarray
    normalization: float

    @property
    def normalized(self) -> np.ndarray:
        if self.normalization == 0:
            return np.zeros_like(self.mae)
        return self.mae / self.normalization


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise PreconditionError("point cloud must be finite")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CloudMetrics:
    acc: float
    comp: float
    cr: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> Dict[str, float]:
        return {"acc": self.acc, "comp": self.comp, "cr": self.cr,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


# Active selection

POLICY_KINDS = ("warprf_image", "warprf_depth", "random", "farthest")


@dataclass(frozen=True)
class SelectionPolicy:
    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise PreconditionError(f"unknown policy {self.kind!r}; expected one of {', '.join(POLICY_KINDS)}")


@dataclass(frozen=True)
class RefineSettings:
    k: int = 3
    radius: float = 0.2
    iters: int = 5


@dataclass(frozen=True, eq=False)
class LoopConfig:
    candidate_pool: Tuple[View, ...]
    rounds: int
    fit_budget_per_round: int = 0
    initial_view_ids: Tuple[str, ...] = ()
    num_initial: int = 4
    initial_views: Tuple[View, ...] = ()  # disjoint from the pool when given
    eval_views: Tuple[View, ...] = ()
    refine: Optional[RefineSettings] = None
    seed: int = 0
    warm_start: bool = True
    penalty: float = 1.0
    nearest_k: Optional[int] = None
    cloud_threshold: float = 0.05
    threads: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise PreconditionError("rounds must be at least 1")
        if self.fit_budget_per_round < 0:
            raise PreconditionError("fit budget must be non-negative")
        if self.num_initial < 1:
            raise PreconditionError("num_initial must be at least 1")
        pool_ids = {view.id for view in self.candidate_pool}
        if len(pool_ids) != len(self.candidate_pool):
            raise PreconditionError("candidate pool ids must be unique")
        missing = [view_id for view_id in self.initial_view_ids if view_id not in pool_ids]
        if missing:
            raise PreconditionError(f"initial views not in pool: {', '.join(missing)}")
        if pool_ids & {view.id for view in self.initial_views}:
            raise PreconditionError("explicit initial views must be disjoint from the pool")


@dataclass
class RoundRecord:
    round: int
    selected_view: str
    scores: List[ViewScore]
    metrics_after_fit: Dict[str, float]
    selected_pose: Optional[Pose] = None

    def to_dict(self) -> Dict:
        data = {
            "round": self.round,
            "selected_view": self.selected_view,
            "scores": [{"view_id": s.view_id, "score": s.score, "covered_fraction": s.covered_fraction} for s in self.scores],
            "metrics_after_fit": dict(sorted(self.metrics_after_fit.items())),
        }
        if self.selected_pose is not None:
            data["selected_pose"] = {
                "rotation": self.selected_pose.rotation.tolist(),
                "translation": self.selected_pose.translation.tolist(),
            }
        return data
