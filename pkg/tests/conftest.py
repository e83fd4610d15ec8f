"""
Shared scenes, cameras and view builders for the test suite.
"""

import numpy as np
import pytest

from helpers.models import AnalyticScene, Checker, Intrinsics, Plane, Pose, Sphere, View


@pytest.fixture
def intrinsics32():
    return Intrinsics(32.0, 32.0, 15.5, 15.5, 32, 32)


@pytest.fixture
def intrinsics64():
    return Intrinsics(64.0, 64.0, 31.5, 31.5, 64, 64)


@pytest.fixture
def ground_plane():
    """Infinite ground z = 0 with a uniform albedo, so every render is one flat color."""
    return AnalyticScene((Plane((0.0, 0.0, 1.0), 0.0, albedo=(0.5, 0.5, 0.5)),))


@pytest.fixture
def checker_plane():
    return AnalyticScene((Plane((0.0, 0.0, 1.0), 0.0, albedo=(0.8, 0.8, 0.8), checker=Checker(0.25, (0.2, 0.3, 0.4))),))


@pytest.fixture
def look_down():
    """View straight down at the ground from (x, y, height); camera x is world x."""
    def build(intrinsics, x, y, height, view_id):
        return View(intrinsics, Pose.look_at((x, y, height), (x, y, 0.0), up=(0.0, 1.0, 0.0)), view_id)
    return build


@pytest.fixture
def baseline_ring():
    """`count` views on a small circle around `eye`, all looking at `target`."""
    def build(intrinsics, eye, target, count=8, radius=0.2, prefix="src"):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        a = np.cross(forward, (0.0, 0.0, 1.0))
        a /= np.linalg.norm(a)
        b = np.cross(forward, a)
        views = []
        for i in range(count):
            angle = 2.0 * np.pi * i / count
            offset = radius * (np.cos(angle) * a + np.sin(angle) * b)
            views.append(View(intrinsics, Pose.look_at(eye + offset, target), f"{prefix}-{i}"))
        return views
    return build


@pytest.fixture
def smooth_scenes():
    """(name, scene, target eye, look-at) triples whose surfaces fill the target view without silhouettes."""
    return [
        ("plane", AnalyticScene((Plane((0.0, 0.0, 1.0), 0.0, checker=Checker(0.25, (0.2, 0.2, 0.2))),)),
         (0.0, -1.5, 2.5), (0.0, 0.0, 0.0)),
        ("sphere", AnalyticScene((Sphere((0.0, 0.0, 0.0), 5.0, checker=Checker(0.3, (0.3, 0.3, 0.3))),)),
         (0.0, -6.0, 0.5), (0.0, 0.0, 0.0)),
        ("ball", AnalyticScene((Sphere((0.0, 0.0, 0.0), 1.0, checker=Checker(0.2, (0.2, 0.2, 0.2))),)),
         (1.0, -1.0, 0.8), (0.0, 0.0, 0.0)),
    ]
