"""
Training-free uncertainty from multi-view consistency.

Pixel mode averages the L1 gap between the target depth and every source depth warped
into the target; image mode takes, per pixel, the smallest color gap over the warped
source images and sums it over the image.
"""

import math
from typing import List, Optional, Sequence, Union

import numpy as np

from helpers.backend_helper import RenderingBackend
from helpers.geometry_helper import nearest_views, warp_depth, warp_image
from helpers.models import (
    DepthMap,
    ImageBuffer,
    PreconditionError,
    ResolutionMismatchError,
    UncertaintyMap,
    View,
    ViewScore,
)

DEPTH_AVG = "depth-avg"
COLOR_MIN = "color-min"
DEFAULT_PENALTY = 1.0


def _check_shapes(shape, buffers) -> None:
    for buffer in buffers:
        if buffer is not None and tuple(buffer.shape) != tuple(shape):
            raise ResolutionMismatchError(f"buffer of shape {buffer.shape} does not match target {shape}")


def depth_average_map(target_depth: DepthMap, warped_depths: Sequence[DepthMap]) -> UncertaintyMap:
    _check_shapes(target_depth.shape, warped_depths)
    total = np.zeros(target_depth.shape)
    count = np.zeros(target_depth.shape, dtype=np.int64)
    for warped in warped_depths:
        use = warped.valid & target_depth.valid
        total += np.where(use, np.abs(target_depth.values - warped.values), 0.0)
        count += use
    valid = count > 0
    values = np.where(valid, total / np.maximum(count, 1), 0.0)
    return UncertaintyMap(values, valid, count)


def color_min_map(target_image: ImageBuffer, warped_images: Sequence[ImageBuffer]):
    """Per-pixel minimum over sources of the channel-mean absolute color gap, and its coverage mask."""
    _check_shapes(target_image.shape, warped_images)
    best = np.full(target_image.shape, np.inf)
    for warped in warped_images:
        use = warped.valid & target_image.valid
        gap = np.mean(np.abs(target_image.values - warped.values), axis=-1)
        best = np.where(use, np.minimum(best, gap), best)
    covered = np.isfinite(best)
    return np.where(covered, best, 0.0), covered


def color_min_score(target_image: ImageBuffer, warped_images: Sequence[ImageBuffer],
                    penalty: float = DEFAULT_PENALTY, view_id: str = "") -> ViewScore:
    per_pixel, covered = color_min_map(target_image, warped_images)
    uncovered = int(np.count_nonzero(~covered))
    # exactly rounded, so the score does not depend on summation order
    score = math.fsum(per_pixel[covered].tolist()) + penalty * uncovered
    return ViewScore(view_id, float(score), float(np.count_nonzero(covered)) / covered.size)


def uncertainty_from_renders(target_depth: Optional[DepthMap], target_image: Optional[ImageBuffer],
                             warped_depths: Sequence[DepthMap], warped_images: Sequence[ImageBuffer],
                             mode: str, penalty: float = DEFAULT_PENALTY,
                             view_id: str = "") -> Union[UncertaintyMap, ViewScore]:
    if mode == DEPTH_AVG:
        if target_depth is None:
            raise PreconditionError("depth-avg mode needs the target depth")
        return depth_average_map(target_depth, warped_depths)
    if mode == COLOR_MIN:
        if target_image is None:
            raise PreconditionError("color-min mode needs the target image")
        if target_depth is not None:
            _check_shapes(target_image.shape, [target_depth])
        return color_min_score(target_image, warped_images, penalty, view_id)
    raise PreconditionError(f"unknown uncertainty mode {mode!r}")


def _sources(sources: Sequence[View], target: View, nearest_k: Optional[int]) -> List[View]:
    if not sources:
        raise PreconditionError("uncertainty needs at least one source view")
    return nearest_views(target, sources, nearest_k)


def pixel_uncertainty(backend: RenderingBackend, sources: Sequence[View], target: View,
                      nearest_k: Optional[int] = None) -> UncertaintyMap:
    sources = _sources(sources, target, nearest_k)
    if not backend.can_render_depth:
        raise PreconditionError("pixel uncertainty needs a backend that renders depth")
    _, target_depth = backend.render(target)
    warped = [warp_depth((view, backend.render(view)[1]), (target, target_depth)) for view in sources]
    return depth_average_map(target_depth, warped)


def image_uncertainty(backend: RenderingBackend, sources: Sequence[View], target: View,
                      penalty: float = DEFAULT_PENALTY, nearest_k: Optional[int] = None) -> ViewScore:
    sources = _sources(sources, target, nearest_k)
    if not (backend.can_render_depth and backend.can_render_image):
        raise PreconditionError("image uncertainty needs a backend that renders images and depth")
    target_image, target_depth = backend.render(target)
    warped = [warp_image((view, backend.render(view)[0]), (target, target_depth)) for view in sources]
    return color_min_score(target_image, warped, penalty, target.id)


def depth_score(backend: RenderingBackend, sources: Sequence[View], target: View,
                nearest_k: Optional[int] = None) -> ViewScore:
    """Image-level score from the pixel map: the sum of its valid pixels."""
    umap = pixel_uncertainty(backend, sources, target, nearest_k)
    return ViewScore(target.id, math.fsum(umap.values[umap.valid].tolist()), float(np.mean(umap.valid)))
