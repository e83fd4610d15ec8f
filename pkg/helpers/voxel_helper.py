"""
Voxel radiance field: trilinear density/color grid, alpha-compositing renderer and
SGD training on a photometric loss with closed-form gradients.
"""

import io
import json
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from scipy.special import expit

from helpers.geometry_helper import pixel_rays
from helpers.models import ConfigError, DepthMap, ImageBuffer, PreconditionError, View, Vec3, WarpRFError
from helpers.rng_helper import generator

console = Console(stderr=True)

CHECKPOINT_MAGIC = b"VOXF1\n"
RAY_CHUNK = 2048


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class VoxelField:
    """Density and color stored at grid vertices spanning `bounds`.

    Raw parameters are activated with softplus (density) and sigmoid (color), then
    trilinearly interpolated at each ray sample.
    """

    def __init__(self, resolution: Tuple[int, int, int], bounds_min: Vec3, bounds_max: Vec3,
                 step: float, near: float, far: float, background: Vec3 = (1.0, 1.0, 1.0),
                 weight_threshold: float = 0.5, normalize_depth: bool = False,
                 density_params: Optional[np.ndarray] = None, color_params: Optional[np.ndarray] = None):
        if not near < far:
            raise ConfigError("near must be smaller than far", field="near")
        if not step > 0:
            raise ConfigError("step must be positive", field="step")
        if far - near < step:
            raise ConfigError("the near..far interval must hold at least one sample", field="step")
        if any(n < 2 for n in resolution):
            raise ConfigError("every grid axis needs at least 2 vertices", field="resolution")
        self.resolution = tuple(int(n) for n in resolution)
        self.bounds_min = np.asarray(bounds_min, dtype=np.float64)
        self.bounds_max = np.asarray(bounds_max, dtype=np.float64)
        if not np.all(self.bounds_min < self.bounds_max):
            raise ConfigError("bounds_min must be below bounds_max", field="bounds_min")
        self.step = float(step)
        self.near = float(near)
        self.far = float(far)
        self.background = np.asarray(background, dtype=np.float64)
        self.weight_threshold = float(weight_threshold)
        self.normalize_depth = normalize_depth
        self.density_params = np.zeros(self.resolution) if density_params is None else np.array(density_params, dtype=np.float64)
        self.color_params = np.zeros(self.resolution + (3,)) if color_params is None else np.array(color_params, dtype=np.float64)
        if self.density_params.shape != self.resolution or self.color_params.shape != self.resolution + (3,):
            raise ConfigError("parameter arrays do not match the grid resolution", field="resolution")
        self.steps_trained = 0

    @classmethod
    def create(cls, resolution, bounds_min, bounds_max, step, near, far, init_density: float = -2.0,
               init_noise: float = 0.01, seed: int = 0, **kwargs) -> "VoxelField":
        rng = generator(seed, "voxel-init")
        density = init_density + init_noise * rng.standard_normal(tuple(resolution))
        color = init_noise * rng.standard_normal(tuple(resolution) + (3,))
        return cls(resolution, bounds_min, bounds_max, step, near, far,
                   density_params=density, color_params=color, **kwargs)

    def copy(self) -> "VoxelField":
        clone = VoxelField(self.resolution, self.bounds_min, self.bounds_max, self.step, self.near, self.far,
                           self.background, self.weight_threshold, self.normalize_depth,
                           self.density_params.copy(), self.color_params.copy())
        clone.steps_trained = self.steps_trained
        return clone

    @property
    def sample_depths(self) -> np.ndarray:
        count = int(np.floor((self.far - self.near) / self.step + 1e-9))
        return self.near + (np.arange(count) + 0.5) * self.step

    def interpolation(self, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Corner indices and trilinear weights for every (ray, sample): shapes (R, N, 8)."""
        t = self.sample_depths
        points = origins[:, None, :] + t[None, :, None] * directions[:, None, :]
        res = np.array(self.resolution)
        grid = (points - self.bounds_min) / (self.bounds_max - self.bounds_min) * (res - 1)
        inside = np.all((grid >= 0) & (grid <= res - 1), axis=-1)
        base = np.clip(np.floor(grid).astype(np.int64), 0, res - 2)
        frac = np.clip(grid - base, 0.0, 1.0)
        indices = []
        weights = []
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    i = base[..., 0] + dx
                    j = base[..., 1] + dy
                    k = base[..., 2] + dz
                    indices.append((i * res[1] + j) * res[2] + k)
                    w = (np.where(dx, frac[..., 0], 1 - frac[..., 0])
                         * np.where(dy, frac[..., 1], 1 - frac[..., 1])
                         * np.where(dz, frac[..., 2], 1 - frac[..., 2]))
                    weights.append(np.where(inside, w, 0.0))
        return np.stack(indices, axis=-1), np.stack(weights, axis=-1)

    def query(self, indices: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sigma_vertices = softplus(self.density_params).ravel()
        color_vertices = expit(self.color_params).reshape(-1, 3)
        sigma = np.sum(weights * sigma_vertices[indices], axis=-1)
        color = np.sum(weights[..., None] * color_vertices[indices], axis=-2)
        return sigma, color


@dataclass
class Composite:
    color: np.ndarray         # (R, 3)
    depth: np.ndarray         # (R,) weighted sample depth, not normalized
    weights: np.ndarray       # (R, N)
    transmittance: np.ndarray  # (R, N) before each sample
    accumulated: np.ndarray   # (R,) sum of weights
    alpha: np.ndarray         # (R, N)


def alpha_composite(sigma: np.ndarray, color: np.ndarray, t: np.ndarray, step: float, background) -> Composite:
    alpha = 1.0 - np.exp(-sigma * step)
    survive = 1.0 - alpha
    transmittance = np.concatenate([np.ones(sigma.shape[:-1] + (1,)), np.cumprod(survive, axis=-1)[..., :-1]], axis=-1)
    weights = alpha * transmittance
    residual = transmittance[..., -1] * survive[..., -1]
    rgb = np.sum(weights[..., None] * color, axis=-2) + residual[..., None] * np.asarray(background, dtype=np.float64)
    depth = np.sum(weights * t, axis=-1)
    return Composite(rgb, depth, weights, transmittance, np.sum(weights, axis=-1), alpha)


def render_rays(field: VoxelField, origins: np.ndarray, directions: np.ndarray) -> Composite:
    indices, weights = field.interpolation(origins, directions)
    sigma, color = field.query(indices, weights)
    return alpha_composite(sigma, color, field.sample_depths, field.step, field.background)


def voxel_render(field: VoxelField, view: View) -> Tuple[ImageBuffer, DepthMap]:
    origins, directions = pixel_rays(view)
    origins = np.ascontiguousarray(origins.reshape(-1, 3))
    directions = directions.reshape(-1, 3)
    colors, depths, accumulated = [], [], []
    for start in range(0, len(directions), RAY_CHUNK):
        part = render_rays(field, origins[start:start + RAY_CHUNK], directions[start:start + RAY_CHUNK])
        colors.append(part.color)
        depths.append(part.depth)
        accumulated.append(part.accumulated)
    color = np.concatenate(colors).reshape(view.shape + (3,))
    depth = np.concatenate(depths).reshape(view.shape)
    weight = np.concatenate(accumulated).reshape(view.shape)
    if field.normalize_depth:
        depth = depth / np.where(weight > 0, weight, 1.0)
    valid = (weight >= field.weight_threshold) & (depth > 0)
    return (ImageBuffer(np.clip(color, 0.0, 1.0), np.ones(view.shape, dtype=bool)),
            DepthMap(np.where(valid, depth, 0.0), valid))


def loss_and_gradients(field: VoxelField, origins: np.ndarray, directions: np.ndarray,
                       targets: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Summed squared color error over the batch and its gradients w.r.t. the raw parameters.

    The gradient of a ray's color with respect to one sample's alpha is the transmittance
    before it times (sample color - color composited behind it), where "behind" starts as
    the background and is folded back to front.
    """
    indices, weights = field.interpolation(origins, directions)
    sigma, color = field.query(indices, weights)
    comp = alpha_composite(sigma, color, field.sample_depths, field.step, field.background)
    residual = comp.color - targets
    loss = float(np.sum(residual * residual))
    d_rgb = 2.0 * residual

    count = sigma.shape[-1]
    suffix = np.broadcast_to(field.background, residual.shape).copy()
    d_alpha = np.zeros(sigma.shape)
    for i in range(count - 1, -1, -1):
        d_alpha[:, i] = comp.transmittance[:, i] * np.sum((color[:, i] - suffix) * d_rgb, axis=-1)
        suffix = comp.alpha[:, i, None] * color[:, i] + (1.0 - comp.alpha[:, i, None]) * suffix
    d_sigma = d_alpha * field.step * (1.0 - comp.alpha)
    d_color = comp.weights[..., None] * d_rgb[:, None, :]

    size = int(np.prod(field.resolution))
    flat = indices.ravel()
    grad_sigma_vertices = np.bincount(flat, weights=(weights * d_sigma[..., None]).ravel(), minlength=size)
    grad_color_vertices = np.stack([
        np.bincount(flat, weights=(weights * d_color[..., c, None]).ravel(), minlength=size) for c in range(3)
    ], axis=-1)
    grad_density = grad_sigma_vertices.reshape(field.resolution) * expit(field.density_params)
    activated = expit(field.color_params)
    grad_color = grad_color_vertices.reshape(field.resolution + (3,)) * activated * (1.0 - activated)
    return loss, grad_density, grad_color


def voxel_train(field: VoxelField, training_views: Sequence[Tuple[View, ImageBuffer]], steps: int,
                learning_rate: float, ray_batch: int, seed: int, momentum: float = 0.0) -> List[float]:
    """Plain SGD on random ray batches; returns the loss of every step."""
    if not training_views:
        raise PreconditionError("voxel_train needs at least one training view")
    if steps <= 0:
        return []
    origins, directions, colors = [], [], []
    for view, image in training_views:
        o, d = pixel_rays(view)
        keep = image.valid.ravel()
        origins.append(np.ascontiguousarray(o.reshape(-1, 3))[keep])
        directions.append(d.reshape(-1, 3)[keep])
        colors.append(image.values.reshape(-1, 3)[keep])
    origins = np.concatenate(origins)
    directions = np.concatenate(directions)
    colors = np.concatenate(colors)
    if len(colors) == 0:
        raise PreconditionError("training images have no valid pixels")

    velocity_density = np.zeros_like(field.density_params)
    velocity_color = np.zeros_like(field.color_params)
    trace = []
    for _ in range(steps):
        rng = generator(seed, "voxel-rays", field.steps_trained)
        batch = rng.integers(0, len(colors), size=ray_batch)
        loss, grad_density, grad_color = loss_and_gradients(field, origins[batch], directions[batch], colors[batch])
        if not np.isfinite(loss):
            raise WarpRFError(f"voxel training diverged at step {field.steps_trained}")
        velocity_density = momentum * velocity_density - learning_rate * grad_density
        velocity_color = momentum * velocity_color - learning_rate * grad_color
        field.density_params += velocity_density
        field.color_params += velocity_color
        field.steps_trained += 1
        trace.append(loss)
    return trace


def save_checkpoint(path: str, field: VoxelField) -> None:
    header = {
        "resolution": list(field.resolution),
        "bounds_min": field.bounds_min.tolist(),
        "bounds_max": field.bounds_max.tolist(),
        "step": field.step,
        "near": field.near,
        "far": field.far,
        "background": field.background.tolist(),
        "weight_threshold": field.weight_threshold,
        "normalize_depth": field.normalize_depth,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)
        f.write(field.density_params.astype("<f4").tobytes())
        f.write(field.color_params.astype("<f4").tobytes())


def load_checkpoint(path: str) -> VoxelField:
    with open(path, "rb") as f:
        data = f.read()
    stream = io.BytesIO(data)
    if stream.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise WarpRFError(f"{path} is not a voxel field checkpoint")
    try:
        (length,) = struct.unpack("<I", stream.read(4))
        header = json.loads(stream.read(length).decode("utf-8"))
        resolution = tuple(header["resolution"])
        size = int(np.prod(resolution))
        density = np.frombuffer(stream.read(4 * size), dtype="<f4").reshape(resolution)
        color = np.frombuffer(stream.read(12 * size), dtype="<f4").reshape(resolution + (3,))
    except (struct.error, ValueError, KeyError) as e:
        raise WarpRFError(f"truncated or malformed checkpoint {path}: {e}") from e
    field = VoxelField(resolution, header["bounds_min"], header["bounds_max"], header["step"], header["near"],
                       header["far"], header["background"], header["weight_threshold"], header["normalize_depth"],
                       density.astype(np.float64), color.astype(np.float64))
    console.print(f"[green]✓ Loaded voxel field {resolution} from {path}[/green]")
    return field
