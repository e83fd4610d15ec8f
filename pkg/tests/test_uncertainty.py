#!/usr/bin/env python3
"""
Test script for multi-view consistency uncertainty
"""

import numpy as np
import pytest

from helpers.active_helper import score_candidates, select_next
from helpers.backend_helper import DegradedBackend, OracleBackend
from helpers.metrics_helper import ause, evaluation_mask
from helpers.models import (
    AnalyticScene,
    DegradationSpec,
    DepthMap,
    ImageBuffer,
    Plane,
    Pose,
    PreconditionError,
    Region,
    ResolutionMismatchError,
    Sphere,
    SelectionPolicy,
    View,
)
from helpers.rng_helper import generator
from helpers.uncertainty_helper import (
    COLOR_MIN,
    DEPTH_AVG,
    color_min_score,
    depth_average_map,
    depth_score,
    image_uncertainty,
    pixel_uncertainty,
    uncertainty_from_renders,
)


def depth(values, valid=None):
    values = np.asarray(values, dtype=np.float64)
    return DepthMap(values, np.ones(values.shape, dtype=bool) if valid is None else valid)


def image(colors, valid=None):
    colors = np.asarray(colors, dtype=np.float64)
    return ImageBuffer(colors, np.ones(colors.shape[:2], dtype=bool) if valid is None else valid)


def biased_target_setup(intrinsics, look_down, noise_sigma=0.0, seed=0):
    """Ground plane seen from 2 m; only the target's center is pushed 0.1 m too deep."""
    scene = AnalyticScene((Plane((0.0, 0.0, 1.0), 0.0, albedo=(0.5, 0.5, 0.5)),))
    spec = DegradationSpec(region=Region("image_rect", rect=(0.25, 0.25, 0.75, 0.75)), depth_bias=0.1,
                           depth_noise_sigma=noise_sigma, seed=seed, view_ids=("target",))
    backend = DegradedBackend(scene, spec)
    target = look_down(intrinsics, 0.0, 0.0, 2.0, "target")
    sources = [look_down(intrinsics, x, y, 2.0, f"src-{i}")
               for i, (x, y) in enumerate([(0.2, 0.0), (-0.2, 0.0), (0.0, 0.2), (0.0, -0.2)])]
    return backend, target, sources


def test_depth_average_hand_example():
    target = depth([[1.0, 2.0], [3.0, 4.0]])
    first = depth([[1.0, 2.0], [3.0, 5.0]])
    second = depth([[2.0, 9.0], [9.0, 9.0]], valid=np.array([[True, False], [False, False]]))
    umap = depth_average_map(target, [first, second])
    np.testing.assert_allclose(umap.values, [[0.5, 0.0], [0.0, 1.0]])
    assert umap.valid.all()
    assert umap.contributing_count.tolist() == [[2, 1], [1, 1]]


def test_pixels_without_a_valid_warp_are_invalid():
    target = depth([[1.0, 2.0]], valid=np.array([[True, False]]))
    warped = depth([[1.5, 2.0]], valid=np.array([[False, True]]))
    umap = depth_average_map(target, [warped])
    assert not umap.valid.any()
    assert np.all(umap.values == 0.0)


def test_depth_average_rejects_mismatched_maps():
    with pytest.raises(ResolutionMismatchError):
        depth_average_map(depth(np.ones((2, 2))), [depth(np.ones((2, 3)))])


def test_color_min_takes_the_best_source_and_penalizes_holes():
    target = image([[[0.5, 0.5, 0.5], [0.2, 0.2, 0.2], [0.9, 0.9, 0.9]]])
    first = image([[[0.6, 0.5, 0.4], [0.2, 0.2, 0.5], [0.0, 0.0, 0.0]]],
                  valid=np.array([[True, True, False]]))
    second = image([[[0.5, 0.5, 0.5], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]],
                   valid=np.array([[True, False, False]]))
    score = color_min_score(target, [first, second], penalty=2.0, view_id="v")
    assert score.view_id == "v"
    assert score.score == pytest.approx(0.1 + 2.0)
    assert score.covered_fraction == pytest.approx(2.0 / 3.0)


def test_color_min_score_is_order_independent():
    rng = generator(0, "test-order")
    target = image(rng.random((8, 8, 3)))
    warped = [image(rng.random((8, 8, 3)), valid=rng.random((8, 8)) < 0.6) for _ in range(4)]
    forward = color_min_score(target, warped)
    backward = color_min_score(target, warped[::-1])
    assert forward.score == backward.score


def test_uncertainty_from_renders_dispatches_on_mode():
    target_depth = depth([[1.0, 1.0]])
    target_image = image([[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]])
    umap = uncertainty_from_renders(target_depth, None, [depth([[1.5, 1.0]])], [], DEPTH_AVG)
    np.testing.assert_allclose(umap.values, [[0.5, 0.0]])
    score = uncertainty_from_renders(target_depth, target_image, [], [target_image], COLOR_MIN, view_id="x")
    assert score.score == 0.0 and score.covered_fraction == 1.0
    with pytest.raises(PreconditionError):
        uncertainty_from_renders(target_depth, target_image, [], [], "median")
    with pytest.raises(PreconditionError):
        uncertainty_from_renders(None, target_image, [], [], DEPTH_AVG)


def test_uncertainty_needs_sources(intrinsics32, ground_plane, look_down):
    backend = OracleBackend(ground_plane)
    with pytest.raises(PreconditionError):
        pixel_uncertainty(backend, [], look_down(intrinsics32, 0.0, 0.0, 2.0, "t"))


@pytest.mark.oracle
def test_oracle_views_are_consistent(intrinsics64, smooth_scenes, baseline_ring):
    for name, scene, eye, target_point in smooth_scenes:
        backend = OracleBackend(scene)
        target = View(intrinsics64, Pose.look_at(eye, target_point), "target")
        sources = baseline_ring(intrinsics64, eye, target_point)
        umap = pixel_uncertainty(backend, sources, target)
        assert umap.valid.mean() > 0.2, name
        assert np.percentile(umap.values[umap.valid], 95) < 0.01, name


@pytest.mark.oracle
def test_known_depth_error_is_recovered(intrinsics32, look_down):
    backend, target, sources = biased_target_setup(intrinsics32, look_down)
    umap = pixel_uncertainty(backend, sources, target)
    inside = backend.corrupted_pixels(target)
    assert (umap.valid & inside).any() and (umap.valid & ~inside).any()
    assert 0.08 <= np.mean(umap.values[umap.valid & inside]) <= 0.12
    assert np.mean(umap.values[umap.valid & ~inside]) < 0.01


@pytest.mark.oracle
def test_pixel_uncertainty_ranks_error_better_than_chance(intrinsics32, look_down):
    wins = 0
    for trial in range(20):
        backend, target, sources = biased_target_setup(intrinsics32, look_down, noise_sigma=0.03, seed=trial)
        umap = pixel_uncertainty(backend, sources, target)
        _, _, error = backend.render_with_error(target)
        mask = evaluation_mask(umap.valid, np.isfinite(error))
        ours = ause(umap.values, error, mask, num_bins=20)
        chance = ause(generator(trial, "test-chance").random(error.shape), error, mask, num_bins=20)
        assert ours == pytest.approx(0.0, abs=0.01)
        wins += ours < chance
    assert wins >= 18


def test_depth_score_sums_the_map(intrinsics32, look_down):
    backend, target, sources = biased_target_setup(intrinsics32, look_down)
    umap = pixel_uncertainty(backend, sources, target)
    score = depth_score(backend, sources, target)
    assert score.view_id == "target"
    assert score.score == pytest.approx(umap.total())


def test_nearest_k_limits_the_sources(intrinsics32, look_down):
    backend, target, sources = biased_target_setup(intrinsics32, look_down)
    far = look_down(intrinsics32, 40.0, 0.0, 2.0, "far")
    umap = pixel_uncertainty(backend, sources + [far], target, nearest_k=4)
    assert umap.contributing_count.max() <= 4


@pytest.mark.oracle
@pytest.mark.parametrize("seed", range(10))
def test_image_score_prefers_views_of_the_corrupted_sector(intrinsics32, ground_plane, look_down, seed):
    start = generator(seed, "test-sector").uniform(0.0, 2.0 * np.pi)
    region = Region("world_sector", azimuth_start=start, azimuth_end=start + np.pi / 3)
    backend = DegradedBackend(ground_plane, DegradationSpec(region=region, color_noise_sigma=0.2, seed=seed))
    sources = [look_down(intrinsics32, x, y, 6.0, f"src-{i}")
               for i, (x, y) in enumerate([(0.3, 0.3), (0.3, -0.3), (-0.3, 0.3), (-0.3, -0.3)])]
    candidates = []
    for i in range(12):
        phi = 2.0 * np.pi * i / 12
        eye = (np.cos(phi), np.sin(phi), 2.5)
        candidates.append(View(intrinsics32, Pose.look_at(eye, (2.5 * np.cos(phi), 2.5 * np.sin(phi), 0.0)), f"cand-{i:02d}"))

    scores = score_candidates(backend, sources, candidates, SelectionPolicy("warprf_image"), penalty=0.0)
    selected = select_next(scores)
    brute = {view.id: image_uncertainty(backend, sources, view, penalty=0.0).score for view in candidates}
    assert selected == max(sorted(brute), key=lambda view_id: brute[view_id])
    assert brute[selected] > 0.0
    chosen = next(view for view in candidates if view.id == selected)
    assert backend.corrupted_pixels(chosen).any()


def scaled_setup(intrinsics, look_down, k):
    """Plane and sphere with a biased target, every length multiplied by `k`."""
    scene = AnalyticScene((
        Plane((0.0, 0.0, 1.0), 0.0, albedo=(0.5, 0.5, 0.5)),
        Sphere((0.3 * k, 0.1 * k, 0.2 * k), 0.4 * k, albedo=(0.7, 0.2, 0.2)),
    ))
    spec = DegradationSpec(region=Region("image_rect", rect=(0.25, 0.25, 0.75, 0.75)), depth_bias=0.1 * k,
                           view_ids=("target",))
    target = look_down(intrinsics, 0.0, 0.0, 2.0 * k, "target")
    sources = [look_down(intrinsics, x * k, y * k, 2.0 * k, f"src-{i}")
               for i, (x, y) in enumerate([(0.25, 0.0), (-0.2, 0.05), (0.0, 0.3), (0.1, -0.2)])]
    return DegradedBackend(scene, spec), target, sources


@pytest.mark.parametrize("k", [0.5, 3.0])
def test_depth_uncertainty_scales_with_the_scene(intrinsics32, look_down, k):
    backend, target, sources = scaled_setup(intrinsics32, look_down, 1.0)
    base = pixel_uncertainty(backend, sources, target)
    backend, target, sources = scaled_setup(intrinsics32, look_down, k)
    scaled = pixel_uncertainty(backend, sources, target)
    same = base.contributing_count == scaled.contributing_count
    assert same.mean() > 0.99
    both = same & base.valid
    assert both.any()
    np.testing.assert_allclose(scaled.values[both], k * base.values[both], rtol=1e-9, atol=1e-9 * k)


def test_depth_uncertainty_ignores_source_order(intrinsics32, look_down):
    backend, target, sources = scaled_setup(intrinsics32, look_down, 1.0)
    forward = pixel_uncertainty(backend, sources, target)
    for order in ([3, 1, 0, 2], [2, 3, 1, 0]):
        shuffled = pixel_uncertainty(backend, [sources[i] for i in order], target)
        assert np.array_equal(shuffled.valid, forward.valid)
        assert np.array_equal(shuffled.contributing_count, forward.contributing_count)
        np.testing.assert_allclose(shuffled.values, forward.values, rtol=1e-12, atol=1e-15)
        assert image_uncertainty(backend, [sources[i] for i in order], target).score == \
            image_uncertainty(backend, sources, target).score


def test_more_sources_never_lose_coverage(intrinsics32, ground_plane, look_down):
    backend = OracleBackend(ground_plane)
    target = look_down(intrinsics32, 0.0, 0.0, 2.0, "target")
    sources = [look_down(intrinsics32, x, y, 2.0, f"src-{i}")
               for i, (x, y) in enumerate([(0.8, 0.0), (-0.8, 0.0), (0.0, 0.8), (0.0, -0.8)])]
    covered, valid = [], []
    for used in range(1, len(sources) + 1):
        covered.append(image_uncertainty(backend, sources[:used], target).covered_fraction)
        valid.append(int(pixel_uncertainty(backend, sources[:used], target).valid.sum()))
    assert covered == sorted(covered) and valid == sorted(valid)
    assert covered[0] < covered[-1]
