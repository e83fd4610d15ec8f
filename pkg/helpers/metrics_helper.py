"""
Evaluation metrics: sparsification curves and AUSE, PSNR, SSIM, depth MAE and
point-cloud accuracy / completion.
"""

from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from helpers.models import (
    CloudMetrics,
    DepthMap,
    ImageBuffer,
    PointCloud,
    PreconditionError,
    ResolutionMismatchError,
    SparsificationCurve,
)

DEFAULT_BINS = 100
PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
# below this many points the all-pairs search is used directly
BRUTE_FORCE_LIMIT = 64


# Sparsification


def _masked_pairs(uncertainty, error, mask, num_bins: int) -> Tuple[np.ndarray, np.ndarray]:
    uncertainty = np.asarray(uncertainty, dtype=np.float64)
    error = np.asarray(error, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not (uncertainty.shape == error.shape == mask.shape):
        raise ResolutionMismatchError(
            f"uncertainty {uncertainty.shape}, error {error.shape} and mask {mask.shape} differ"
        )
    if num_bins < 2:
        raise PreconditionError("num_bins must be at least 2")
    if not mask.any():
        raise PreconditionError("sparsification mask is empty")
    u, e = uncertainty[mask], error[mask]
    if len(e) < num_bins:
        raise PreconditionError(f"{len(e)} masked pixels is fewer than {num_bins} bins")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(e))):
        raise PreconditionError("uncertainty and error must be finite inside the mask")
    return u, e


def _removal_curve(ranking: np.ndarray, error: np.ndarray, num_bins: int) -> SparsificationCurve:
    # descending ranking, ties by ascending (row-major) pixel index
    order = np.lexsort((np.arange(len(ranking)), -ranking))
    ordered = error[order]
    n = len(ordered)
    fractions = np.arange(num_bins) / num_bins
    mae = np.array([np.mean(ordered[(k * n) // num_bins:]) for k in range(num_bins)])
    return SparsificationCurve(fractions, mae, float(mae[0]))


def sparsification(uncertainty, error, mask, num_bins: int = DEFAULT_BINS) -> SparsificationCurve:
    """MAE of the pixels left after removing the most uncertain share k/num_bins, for every k."""
    u, e = _masked_pairs(uncertainty, error, mask, num_bins)
    return _removal_curve(u, e, num_bins)


def oracle_sparsification(error, mask, num_bins: int = DEFAULT_BINS) -> SparsificationCurve:
    """Best possible curve: pixels removed in order of their true error."""
    u, e = _masked_pairs(error, error, mask, num_bins)
    return _removal_curve(e, e, num_bins)


def ause_curves(uncertainty, error, mask, num_bins: int = DEFAULT_BINS) -> Tuple[float, SparsificationCurve, SparsificationCurve]:
    u, e = _masked_pairs(uncertainty, error, mask, num_bins)
    curve = _removal_curve(u, e, num_bins)
    oracle = _removal_curve(e, e, num_bins)
    # signed gaps, not clamped per bin
    return float(np.mean(curve.normalized - oracle.normalized)), curve, oracle


def ause(uncertainty, error, mask, num_bins: int = DEFAULT_BINS) -> float:
    return ause_curves(uncertainty, error, mask, num_bins)[0]


def evaluation_mask(*valid_maps) -> np.ndarray:
    """Pixels valid in every given map (ground truth, prediction, uncertainty)."""
    return np.logical_and.reduce([np.asarray(m, dtype=bool) for m in valid_maps])


# Image and depth quality


def _joint(a, b) -> np.ndarray:
    if a.shape != b.shape:
        raise ResolutionMismatchError(f"cannot compare {a.shape} with {b.shape}")
    return a.valid & b.valid


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    joint = _joint(a, b)
    if not joint.any():
        raise PreconditionError("no jointly valid pixels for PSNR")
    mse = float(np.mean((a.values[joint] - b.values[joint]) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a: ImageBuffer, b: ImageBuffer, window: int = 11, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM with a Gaussian window (σ = 1.5), per channel then averaged; peak value 1."""
    if a.shape != b.shape:
        raise ResolutionMismatchError(f"cannot compare {a.shape} with {b.shape}")
    if window < 1 or window % 2 == 0:
        raise PreconditionError("SSIM window must be a positive odd size")
    height, width = a.shape
    if height < window or width < window:
        raise PreconditionError(f"image {width}x{height} is smaller than the {window}px SSIM window")

    c1, c2 = k1 ** 2, k2 ** 2
    truncate = (window - 1) / 2 / SSIM_SIGMA
    pad = (window - 1) // 2

    def blur(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=truncate, mode="reflect")

    scores = []
    for channel in range(a.values.shape[-1]):
        x = a.values[..., channel].astype(np.float64)
        y = b.values[..., channel].astype(np.float64)
        mu_x, mu_y = blur(x), blur(y)
        var_x = blur(x * x) - mu_x * mu_x
        var_y = blur(y * y) - mu_y * mu_y
        cov = blur(x * y) - mu_x * mu_y
        local = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
        scores.append(local[pad:height - pad, pad:width - pad].mean())
    return float(np.mean(scores))


def depth_mae(pred: DepthMap, gt: DepthMap) -> float:
    joint = _joint(pred, gt)
    if not joint.any():
        raise PreconditionError("no jointly valid pixels for depth MAE")
    return float(np.mean(np.abs(pred.values[joint] - gt.values[joint])))


# Point clouds


def _distances(queries: np.ndarray, points: np.ndarray, nearest: np.ndarray) -> np.ndarray:
    diff = queries - points[nearest]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def nearest_distances_brute(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """All-pairs nearest-neighbour distance from every query to `points`."""
    diff = queries[:, None, :] - points[None, :, :]
    nearest = np.argmin(np.sum(diff * diff, axis=-1), axis=1)
    return _distances(queries, points, nearest)


def nearest_distances(queries: np.ndarray, points: np.ndarray, brute_force_limit: int = BRUTE_FORCE_LIMIT) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise PreconditionError("nearest neighbour search over an empty cloud")
    if len(queries) * len(points) <= brute_force_limit ** 2:
        return nearest_distances_brute(queries, points)
    _, nearest = cKDTree(points).query(queries, k=1)
    # recompute with the same expression as the brute-force path so both agree bitwise
    return _distances(queries, points, nearest)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Replace the points in each occupied voxel by their centroid."""
    if voxel_size <= 0 or len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    return PointCloud(sums / counts[:, None])


def cloud_metrics(pred: PointCloud, gt: PointCloud, threshold: float = 0.05,
                  downsample: Optional[float] = None) -> CloudMetrics:
    if len(pred) == 0 or len(gt) == 0:
        raise PreconditionError("cloud metrics need two non-empty clouds")
    if threshold <= 0:
        raise PreconditionError("cloud threshold must be positive")
    if downsample:
        pred, gt = voxel_downsample(pred, downsample), voxel_downsample(gt, downsample)

    to_gt = nearest_distances(pred.points, gt.points)
    to_pred = nearest_distances(gt.points, pred.points)
    precision = float(np.mean(to_gt < threshold))
    recall = float(np.mean(to_pred < threshold))
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return CloudMetrics(
        acc=float(np.mean(to_gt)),
        comp=float(np.mean(to_pred)),
        cr=recall,
        precision=precision,
        recall=recall,
        f1=float(f1),
    )
