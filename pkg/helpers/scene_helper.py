"""
Analytic ray-traced scenes: the exact oracle renderer and its degraded variant.
"""

from typing import Sequence, Tuple

import numpy as np

from helpers.geometry_helper import pixel_grid, pixel_rays, unproject_pixels
from helpers.models import (
    AnalyticScene,
    Box,
    DegradationSpec,
    DepthMap,
    ImageBuffer,
    Plane,
    Region,
    Sphere,
    View,
    WarpRFError,
)
from helpers.rng_helper import normal_field

# Hits closer than this along the ray are ignored.
MIN_HIT = 1e-9


def _tangent_basis(normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(normal, e1)


def _checker_parity(coords: np.ndarray, scale: float) -> np.ndarray:
    cells = np.floor(coords / scale).astype(np.int64)
    return np.sum(cells, axis=-1) % 2 == 1


def _intersect_sphere(sphere: Sphere, origins, directions):
    center = np.asarray(sphere.center, dtype=np.float64)
    oc = origins - center
    a = np.sum(directions * directions, axis=-1)
    b = 2.0 * np.sum(directions * oc, axis=-1)
    c = np.sum(oc * oc, axis=-1) - sphere.radius ** 2
    disc = b * b - 4.0 * a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    near = (-b - root) / (2.0 * a)
    far = (-b + root) / (2.0 * a)
    t = np.where(near > MIN_HIT, near, far)
    hit = (disc >= 0) & (t > MIN_HIT)
    points = origins + t[..., None] * directions
    normals = (points - center) / sphere.radius
    coords = points
    return np.where(hit, t, np.inf), normals, coords


def _intersect_box(box: Box, origins, directions):
    lo = np.asarray(box.minimum, dtype=np.float64)
    hi = np.asarray(box.maximum, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origins) / directions
        t2 = (hi - origins) / directions
    parallel = directions == 0
    inside_slab = (origins >= lo) & (origins <= hi)
    t_near_axis = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    t_far_axis = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = np.max(t_near_axis, axis=-1)
    t_far = np.min(t_far_axis, axis=-1)
    entering = t_near > MIN_HIT
    t = np.where(entering, t_near, t_far)
    hit = (t_far >= t_near) & (t > MIN_HIT) & np.isfinite(t)
    axis = np.where(entering, np.argmax(t_near_axis, axis=-1), np.argmin(t_far_axis, axis=-1))
    direction_on_axis = np.take_along_axis(directions, axis[..., None], axis=-1)[..., 0]
    normals = np.zeros(directions.shape)
    np.put_along_axis(normals, axis[..., None], -np.sign(direction_on_axis)[..., None], axis=-1)
    points = origins + np.where(hit, t, 0.0)[..., None] * directions
    # face-local coordinates: drop the axis the face is perpendicular to
    coords = np.where(np.arange(3) == axis[..., None], 0.0, points)
    return np.where(hit, t, np.inf), normals, coords


def _intersect_plane(plane: Plane, origins, directions):
    normal = np.asarray(plane.normal, dtype=np.float64)
    denom = directions @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (plane.offset - origins @ normal) / denom
    hit = (denom != 0) & (t > MIN_HIT)
    points = origins + np.where(hit, t, 0.0)[..., None] * directions
    e1, e2 = _tangent_basis(normal)
    local = points - plane.offset * normal
    coords = np.stack([local @ e1, local @ e2], axis=-1)
    if plane.extent is not None:
        hit &= np.all(np.abs(coords) <= plane.extent, axis=-1)
    normals = np.broadcast_to(normal, directions.shape)
    return np.where(hit, t, np.inf), normals, coords


_INTERSECTORS = {Sphere: _intersect_sphere, Box: _intersect_box, Plane: _intersect_plane}


def trace(scene: AnalyticScene, origins: np.ndarray, directions: np.ndarray,
          skip: Sequence[int] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest-hit ray tracing. Returns (t, color); t is inf on misses."""
    shape = directions.shape[:-1]
    best_t = np.full(shape, np.inf)
    color = np.broadcast_to(np.asarray(scene.background, dtype=np.float64), shape + (3,)).copy()
    light = -np.asarray(scene.light.direction, dtype=np.float64)
    light /= np.linalg.norm(light)
    for index, primitive in enumerate(scene.primitives):
        if index in skip:
            continue
        t, normals, coords = _INTERSECTORS[type(primitive)](primitive, origins, directions)
        closer = t < best_t
        if not np.any(closer):
            continue
        best_t = np.where(closer, t, best_t)
        albedo = np.broadcast_to(np.asarray(primitive.albedo, dtype=np.float64), shape + (3,))
        if primitive.checker is not None:
            odd = _checker_parity(coords, primitive.checker.scale)
            albedo = np.where(odd[..., None], np.asarray(primitive.checker.albedo, dtype=np.float64), albedo)
        # two-sided surfaces: face the normal toward the viewer
        facing = np.where((np.sum(normals * directions, axis=-1) > 0)[..., None], -normals, normals)
        diffuse = np.clip(facing @ light, 0.0, None)
        shade = scene.light.ambient + (1.0 - scene.light.ambient) * diffuse
        shaded = np.clip(albedo * shade[..., None], 0.0, 1.0)
        color = np.where(closer[..., None], shaded, color)
    return best_t, color


def oracle_render(scene: AnalyticScene, view: View, skip: Sequence[int] = ()) -> Tuple[ImageBuffer, DepthMap]:
    origins, directions = pixel_rays(view)
    t, color = trace(scene, origins, directions, skip)
    hit = np.isfinite(t)
    image = ImageBuffer(color, np.ones(view.shape, dtype=bool))
    depth = DepthMap(np.where(hit, t, 0.0), hit)
    return image, depth


def region_mask(region: Region, view: View, depth: DepthMap) -> np.ndarray:
    """Pixels of `view` inside `region`; world-space kinds test the surface point seen there."""
    height, width = view.shape
    if region.kind == "all":
        return np.ones((height, width), dtype=bool)
    u, v = pixel_grid(view.intrinsics)
    if region.kind == "image_rect":
        u0, v0, u1, v1 = region.rect
        un, vn = (u + 0.5) / width, (v + 0.5) / height
        return (un >= u0) & (un < u1) & (vn >= v0) & (vn < v1)
    points = unproject_pixels(u, v, np.where(depth.valid, depth.values, 1.0), view)
    if region.kind == "world_box":
        inside = np.all((points >= np.asarray(region.box_min)) & (points <= np.asarray(region.box_max)), axis=-1)
        return inside & depth.valid
    offset = points - np.asarray(region.center, dtype=np.float64)
    azimuth = np.mod(np.arctan2(offset[..., 1], offset[..., 0]) - region.azimuth_start, 2.0 * np.pi)
    span = np.mod(region.azimuth_end - region.azimuth_start, 2.0 * np.pi)
    return (azimuth < span) & depth.valid


def degraded_render(scene: AnalyticScene, spec: DegradationSpec, view: View) -> Tuple[ImageBuffer, DepthMap, np.ndarray]:
    """Oracle render with `spec` applied; also returns the exact per-pixel depth error.

    The error is |degraded − oracle| where both depths are valid, 0 where neither is,
    and NaN where exactly one is.
    """
    true_image, true_depth = oracle_render(scene, view)
    if not spec.applies_to(view):
        return true_image, true_depth, np.zeros(view.shape)

    if spec.deleted_primitives:
        image, depth = oracle_render(scene, view, skip=spec.deleted_primitives)
        color, values, valid = image.values.copy(), depth.values.copy(), depth.valid.copy()
    else:
        color, values, valid = true_image.values.copy(), true_depth.values.copy(), true_depth.valid.copy()

    inside = region_mask(spec.region, view, true_depth)
    corrupt = inside & valid
    if spec.depth_bias or spec.depth_noise_sigma:
        noise = spec.depth_noise_sigma * normal_field(spec.seed, view.shape, "depth-noise", view.id)
        values = np.where(corrupt, values + spec.depth_bias + noise, values)
        valid &= ~corrupt | (values > 0)
        values = np.where(valid, values, 0.0)
    if spec.color_noise_sigma:
        noise = spec.color_noise_sigma * normal_field(spec.seed, view.shape + (3,), "color-noise", view.id)
        color = np.where(inside[..., None], np.clip(color + noise, 0.0, 1.0), color)

    both = valid & true_depth.valid
    error = np.where(both, np.abs(values - true_depth.values), 0.0)
    error = np.where(valid != true_depth.valid, np.nan, error)
    if not np.array_equal(error[both], np.abs(values[both] - true_depth.values[both])):
        raise WarpRFError("degraded render lost track of its own error")
    return ImageBuffer(color, np.ones(view.shape, dtype=bool)), DepthMap(values, valid), error
