"""
Pinhole projection, pose algebra and backward warping between posed views.

Conventions: camera x right, y down, z forward; depth is camera-frame z; pixel (0, 0)
has its center at continuous coordinate (0, 0), so in-bounds means [0, W-1] × [0, H-1].
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from helpers.models import (
    DepthMap,
    ImageBuffer,
    Intrinsics,
    PointCloud,
    Pose,
    PreconditionError,
    ResolutionMismatchError,
    View,
)

# Slack on the image border so pixels reprojected onto themselves stay in bounds.
BOUNDS_EPS = 1e-6


def project_points(points_world: np.ndarray, view: View) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (..., 3) world points; returns (..., 2) pixels and (...) depths."""
    k = view.intrinsics
    cam = view.pose.to_camera(np.asarray(points_world, dtype=np.float64))
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[..., 0] / z + k.cx
        v = k.fy * cam[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1), z


def unproject_pixels(u: np.ndarray, v: np.ndarray, depth: np.ndarray, view: View) -> np.ndarray:
    """Vectorized inverse of project_points; no depth check."""
    k = view.intrinsics
    cam = np.stack([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth], axis=-1)
    return view.pose.to_world(cam)


def project(point_world, view: View) -> Tuple[np.ndarray, float]:
    pixels, depth = project_points(np.asarray(point_world, dtype=np.float64).reshape(3), view)
    return pixels, float(depth)


def unproject(pixel, depth: float, view: View) -> np.ndarray:
    if not depth > 0:
        raise PreconditionError(f"unproject needs positive depth, got {depth}")
    pixel = np.asarray(pixel, dtype=np.float64).reshape(2)
    return unproject_pixels(pixel[0], pixel[1], np.float64(depth), view)


def camera_depth(points_world: np.ndarray, view: View) -> np.ndarray:
    return view.pose.to_camera(points_world)[..., 2]


def relative_transform(source: View, target: View) -> Pose:
    """Maps source camera coordinates into target camera coordinates."""
    return source.pose.relative_to(target.pose)


def pixel_grid(intrinsics: Intrinsics) -> Tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0:intrinsics.height, 0:intrinsics.width]
    return u.astype(np.float64), v.astype(np.float64)


def pixel_rays(view: View) -> Tuple[np.ndarray, np.ndarray]:
    """Central ray per pixel. Directions have unit camera-frame z, so the ray parameter is planar depth."""
    k = view.intrinsics
    u, v = pixel_grid(k)
    cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    directions = cam @ view.pose.rotation.T
    origins = np.broadcast_to(view.pose.translation, directions.shape)
    return origins, directions


def in_bounds(pixels: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    u, v = pixels[..., 0], pixels[..., 1]
    return (
        np.isfinite(u) & np.isfinite(v)
        & (u >= -BOUNDS_EPS) & (u <= intrinsics.width - 1 + BOUNDS_EPS)
        & (v >= -BOUNDS_EPS) & (v <= intrinsics.height - 1 + BOUNDS_EPS)
    )


def sample_bilinear(values: np.ndarray, valid: np.ndarray, pixels: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup renormalized over valid neighbours.

    `values` is H×W or H×W×C, `pixels` (..., 2) continuous coordinates; entries outside
    `mask` are skipped. Returns (samples, ok) where ok is False for masked-out lookups and
    for lookups whose contributing neighbours are all invalid.
    """
    height, width = valid.shape
    coords = np.where(mask[..., None], pixels, 0.0)
    u = np.clip(coords[..., 0], 0.0, width - 1)
    v = np.clip(coords[..., 1], 0.0, height - 1)
    x0 = np.minimum(np.floor(u).astype(np.int64), max(width - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = u - x0
    fy = v - y0

    corners = ((y0, x0, (1 - fx) * (1 - fy)), (y0, x1, fx * (1 - fy)), (y1, x0, (1 - fx) * fy), (y1, x1, fx * fy))
    total = np.zeros(u.shape)
    accum = np.zeros(u.shape + values.shape[2:])
    channels = values.ndim == 3
    for yy, xx, w in corners:
        good = valid[yy, xx]
        w = np.where(good, w, 0.0)
        total += w
        sample = np.where(good[..., None] if channels else good, values[yy, xx], 0.0)
        accum += w[..., None] * sample if channels else w * sample
    ok = mask & (total > 0)
    safe = np.where(ok, total, 1.0)
    out = accum / (safe[..., None] if channels else safe)
    return out, ok


def _check_resolution(view: View, shape: Tuple[int, int], what: str) -> None:
    if tuple(shape) != view.shape:
        raise ResolutionMismatchError(f"{what} is {shape[1]}x{shape[0]} but view {view.id!r} is {view.shape[1]}x{view.shape[0]}")


def _target_correspondence(source_view: View, target_view: View, target_depth: DepthMap):
    """Unproject every valid target pixel and project it into the source view."""
    u, v = pixel_grid(target_view.intrinsics)
    depth = np.where(target_depth.valid, target_depth.values, 1.0)
    points = unproject_pixels(u, v, depth, target_view)
    pixels, source_z = project_points(points, source_view)
    ok = target_depth.valid & (source_z > 0) & in_bounds(pixels, source_view.intrinsics)
    return pixels, ok


def warp_depth(source: Tuple[View, DepthMap], target: Tuple[View, DepthMap]) -> DepthMap:
    """Source depth backward-warped into the target view and re-expressed in the target frame."""
    source_view, source_depth = source
    target_view, target_depth = target
    _check_resolution(source_view, source_depth.shape, "source depth")
    _check_resolution(target_view, target_depth.shape, "target depth")

    pixels, ok = _target_correspondence(source_view, target_view, target_depth)
    sampled, found = sample_bilinear(source_depth.values, source_depth.valid, pixels, ok)
    ok &= found
    pixels = np.where(ok[..., None], pixels, 0.0)
    points = unproject_pixels(pixels[..., 0], pixels[..., 1], np.where(ok, sampled, 1.0), source_view)
    z = camera_depth(points, target_view)
    # negative-depth exclusion
    ok &= np.isfinite(z) & (z > 0)
    return DepthMap(np.where(ok, z, 0.0), ok)


def warp_image(source: Tuple[View, ImageBuffer], target: Tuple[View, DepthMap]) -> ImageBuffer:
    source_view, source_image = source
    target_view, target_depth = target
    _check_resolution(source_view, source_image.shape, "source image")
    _check_resolution(target_view, target_depth.shape, "target depth")

    pixels, ok = _target_correspondence(source_view, target_view, target_depth)
    sampled, found = sample_bilinear(source_image.values, source_image.valid, pixels, ok)
    ok &= found
    return ImageBuffer(np.where(ok[..., None], np.clip(sampled, 0.0, 1.0), 0.0), ok)


def backproject_depth(view: View, depth: DepthMap) -> PointCloud:
    _check_resolution(view, depth.shape, "depth")
    u, v = pixel_grid(view.intrinsics)
    points = unproject_pixels(u[depth.valid], v[depth.valid], depth.values[depth.valid], view)
    return PointCloud(points)


def camera_distance(a: View, b: View) -> float:
    return float(np.linalg.norm(a.pose.center - b.pose.center))


def axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    skew = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * skew + (1.0 - np.cos(angle)) * (skew @ skew)


def perturb_pose(pose: Pose, translation_cam=(0.0, 0.0, 0.0), axis_cam=(1.0, 0.0, 0.0), angle: float = 0.0) -> Pose:
    """Move the camera along its own axes and rotate it about one of its own axes."""
    rotation = pose.rotation @ axis_angle(axis_cam, angle)
    # re-orthonormalize so long refinement chains stay inside the Pose tolerance
    u, _, vt = np.linalg.svd(rotation)
    rotation = u @ vt
    return Pose(rotation, pose.translation + pose.rotation @ np.asarray(translation_cam, dtype=np.float64))


def ring_views(intrinsics: Intrinsics, count: int, radius: float, height: float = 0.0,
               look_at=(0.0, 0.0, 0.0), phase: float = 0.0, prefix: str = "ring") -> List[View]:
    center = np.asarray(look_at, dtype=np.float64)
    views = []
    for i in range(count):
        angle = phase + 2.0 * np.pi * i / count
        eye = center + np.array([radius * np.cos(angle), radius * np.sin(angle), height])
        views.append(View(intrinsics, Pose.look_at(eye, center), f"{prefix}-{i:03d}"))
    return views


def fibonacci_directions(count: int, min_elevation: Optional[float] = None) -> np.ndarray:
    """Near-uniform unit directions; `min_elevation` (radians) keeps only the band above it."""
    golden = np.pi * (3.0 - np.sqrt(5.0))
    lowest = -1.0 if min_elevation is None else np.sin(min_elevation)
    i = np.arange(count) + 0.5
    z = 1.0 - (1.0 - lowest) * i / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    theta = golden * np.arange(count)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=-1)


def sphere_views(intrinsics: Intrinsics, count: int, radius: float, look_at=(0.0, 0.0, 0.0),
                 min_elevation: Optional[float] = None, prefix: str = "sphere") -> List[View]:
    center = np.asarray(look_at, dtype=np.float64)
    return [
        View(intrinsics, Pose.look_at(center + radius * d, center), f"{prefix}-{i:03d}")
        for i, d in enumerate(fibonacci_directions(count, min_elevation))
    ]


def nearest_views(target: View, views: Sequence[View], k: Optional[int]) -> List[View]:
    if k is None or k >= len(views):
        return list(views)
    order = sorted(range(len(views)), key=lambda i: (camera_distance(target, views[i]), views[i].id))
    return [views[i] for i in order[:k]]
