"""
Rendering backends behind one interface.

Every backend renders (image, depth) for any View and memoizes the most recent renders
until its state changes; trainable backends also implement `fit`.
"""

import threading
from abc import ABC, abstractmethod
from collections import OrderedDict
from typing import List, Sequence, Tuple

import numpy as np
from rich.console import Console

from helpers.models import AnalyticScene, DegradationSpec, DepthMap, ImageBuffer, PreconditionError, View
from helpers.scene_helper import degraded_render, oracle_render, region_mask
from helpers.voxel_helper import VoxelField, voxel_render, voxel_train

console = Console(stderr=True)

# renders kept per backend; enough for a candidate pool plus its training views
DEFAULT_CACHE_SIZE = 256


class RenderingBackend(ABC):
    can_render_image = True
    can_render_depth = True
    trainable = False

    def __init__(self, cache_size: int = DEFAULT_CACHE_SIZE):
        if cache_size < 0:
            raise PreconditionError("render cache size must be non-negative")
        self.cache_size = cache_size
        self._cache: "OrderedDict[Tuple, Tuple[ImageBuffer, DepthMap]]" = OrderedDict()
        self._lock = threading.Lock()

    @abstractmethod
    def _render(self, view: View) -> Tuple[ImageBuffer, DepthMap]:
        ...

    def render(self, view: View) -> Tuple[ImageBuffer, DepthMap]:
        key = view.key()
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self._cache.move_to_end(key)
        if cached is None:
            cached = self._render(view)
            if self.cache_size:
                with self._lock:
                    self._cache[key] = cached
                    self._cache.move_to_end(key)
                    while len(self._cache) > self.cache_size:
                        self._cache.popitem(last=False)
        return cached

    @property
    def cached_renders(self) -> int:
        return len(self._cache)

    def invalidate(self) -> None:
        with self._lock:
            self._cache.clear()

    def fit(self, training: Sequence[Tuple[View, ImageBuffer]], steps: int, seed: int) -> List[float]:
        """Fit to posed training images; fixed backends ignore this."""
        return []


class OracleBackend(RenderingBackend):
    def __init__(self, scene: AnalyticScene, cache_size: int = DEFAULT_CACHE_SIZE):
        super().__init__(cache_size)
        self.scene = scene

    def _render(self, view: View) -> Tuple[ImageBuffer, DepthMap]:
        return oracle_render(self.scene, view)


class DegradedBackend(RenderingBackend):
    """Oracle with known, injected errors."""

    def __init__(self, scene: AnalyticScene, spec: DegradationSpec, cache_size: int = DEFAULT_CACHE_SIZE):
        super().__init__(cache_size)
        self.scene = scene
        self.spec = spec

    def _render(self, view: View) -> Tuple[ImageBuffer, DepthMap]:
        image, depth, _ = degraded_render(self.scene, self.spec, view)
        return image, depth

    def render_with_error(self, view: View) -> Tuple[ImageBuffer, DepthMap, np.ndarray]:
        return degraded_render(self.scene, self.spec, view)

    def corrupted_pixels(self, view: View) -> np.ndarray:
        if not self.spec.applies_to(view):
            return np.zeros(view.shape, dtype=bool)
        _, depth = oracle_render(self.scene, view)
        return region_mask(self.spec.region, view, depth)


class VoxelBackend(RenderingBackend):
    trainable = True

    def __init__(self, field: VoxelField, learning_rate: float = 0.5, ray_batch: int = 1024, momentum: float = 0.0,
                 cache_size: int = DEFAULT_CACHE_SIZE):
        super().__init__(cache_size)
        self.field = field
        self.learning_rate = learning_rate
        self.ray_batch = ray_batch
        self.momentum = momentum

    def _render(self, view: View) -> Tuple[ImageBuffer, DepthMap]:
        return voxel_render(self.field, view)

    def fit(self, training: Sequence[Tuple[View, ImageBuffer]], steps: int, seed: int) -> List[float]:
        self.invalidate()
        trace = voxel_train(self.field, training, steps, self.learning_rate, self.ray_batch, seed, self.momentum)
        if trace:
            console.print(f"[green]✓ Voxel field fitted for {len(trace)} steps "
                          f"(loss {trace[0]:.4f} → {trace[-1]:.4f})[/green]")
        return trace
