"""
Greedy next-best-view selection and the active training loop.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table

from helpers.backend_helper import RenderingBackend
from helpers.geometry_helper import backproject_depth, camera_distance, perturb_pose
from helpers.metrics_helper import cloud_metrics, depth_mae, psnr, ssim
from helpers.models import (
    ImageBuffer,
    LoopConfig,
    NaNScoreError,
    PointCloud,
    PoolExhaustedError,
    PreconditionError,
    RoundRecord,
    SelectionPolicy,
    View,
    ViewScore,
    WarpRFError,
)
from helpers.rng_helper import generator, uniform_scores
from helpers.uncertainty_helper import DEFAULT_PENALTY, depth_score, image_uncertainty

console = Console(stderr=True)

# camera-frame unit moves tried around the incumbent: translations along x, y, z and
# rotations (at half the radius, in radians) about x and y
_TRANSLATIONS = [np.array(v, dtype=np.float64) * s for v in np.eye(3) for s in (1.0, -1.0)]
_ROTATION_AXES = [np.array(v, dtype=np.float64) * s for v in np.eye(3)[:2] for s in (1.0, -1.0)]


def score_candidates(backend: RenderingBackend, train_views: Sequence[View], candidates: Sequence[View],
                     policy: SelectionPolicy, penalty: float = DEFAULT_PENALTY,
                     nearest_k: Optional[int] = None, threads: int = 1) -> List[ViewScore]:
    """Score every candidate under `policy`; higher means more worth adding."""
    if not candidates:
        raise PreconditionError("candidate pool is empty")
    if policy.kind == "random":
        draws = uniform_scores(policy.seed, [view.id for view in candidates], "random-policy")
        return [ViewScore(view.id, float(score)) for view, score in zip(candidates, draws)]
    if not train_views:
        raise PreconditionError(f"{policy.kind} scoring needs at least one training view")
    if policy.kind == "farthest":
        return [ViewScore(view.id, min(camera_distance(view, seen) for seen in train_views)) for view in candidates]

    def score(view: View) -> ViewScore:
        if policy.kind == "warprf_image":
            return image_uncertainty(backend, train_views, view, penalty, nearest_k)
        return depth_score(backend, train_views, view, nearest_k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(score, candidates))
    return [score(view) for view in candidates]


def _ranked(scores: Sequence[ViewScore]) -> List[ViewScore]:
    for item in scores:
        if math.isnan(item.score):
            raise NaNScoreError(f"score for view {item.view_id!r} is NaN")
    return sorted(scores, key=lambda item: (-item.score, item.view_id))


def select_next(scores: Sequence[ViewScore]) -> str:
    """Highest score wins; ties go to the lowest view id."""
    if not scores:
        raise PreconditionError("nothing to select from")
    return _ranked(scores)[0].view_id


def _stencil(view: View, radius: float) -> List[View]:
    moved = [view.with_pose(perturb_pose(view.pose, translation_cam=radius * step)) for step in _TRANSLATIONS]
    turned = [view.with_pose(perturb_pose(view.pose, axis_cam=axis, angle=0.5 * radius)) for axis in _ROTATION_AXES]
    return moved + turned


def refine_pose(backend: RenderingBackend, train_views: Sequence[View], candidate: View, radius: float,
                iters: int, seed: int, penalty: float = DEFAULT_PENALTY,
                nearest_k: Optional[int] = None) -> View:
    """Derivative-free local ascent on the image-level uncertainty.

    Each iteration evaluates a fixed stencil around the incumbent and moves to the best
    neighbour if it is strictly better; otherwise the radius is halved. Ties between
    neighbours are broken by a permutation keyed on `seed`.
    """
    if not radius > 0:
        raise PreconditionError("refine radius must be positive")
    if iters < 0:
        raise PreconditionError("refine iterations must be non-negative")
    if iters == 0:
        return candidate

    def score(view: View) -> float:
        return image_uncertainty(backend, train_views, view, penalty, nearest_k).score

    start = score(candidate)
    incumbent, best = candidate, start
    for iteration in range(iters):
        neighbours = _stencil(incumbent, radius)
        order = generator(seed, "refine", candidate.id, iteration).permutation(len(neighbours))
        values = [score(neighbours[i]) for i in order]
        winner = int(np.argmax(values))
        if values[winner] > best:
            incumbent, best = neighbours[order[winner]], values[winner]
        else:
            radius *= 0.5
    if best < start:
        raise WarpRFError(f"refinement of {candidate.id!r} lowered its score")
    return incumbent


def initial_views(config: LoopConfig) -> List[View]:
    """Explicit initial views, or named pool views, or evenly spaced pool entries."""
    if config.initial_views:
        return list(config.initial_views)
    pool = list(config.candidate_pool)
    if config.initial_view_ids:
        by_id = {view.id: view for view in pool}
        return [by_id[view_id] for view_id in config.initial_view_ids]
    count = min(config.num_initial, len(pool))
    return [pool[(i * len(pool)) // count] for i in range(count)] if count else []


def evaluate_views(backend: RenderingBackend, gt_backend: RenderingBackend, views: Sequence[View],
                   cloud_threshold: float) -> Dict[str, float]:
    """Held-out image, depth and back-projected point-cloud metrics averaged over `views`."""
    if not views:
        return {}
    per_view: Dict[str, List[float]] = {"psnr": [], "ssim": [], "depth_mae": []}
    predicted, reference = [], []
    for view in views:
        image, depth = backend.render(view)
        gt_image, gt_depth = gt_backend.render(view)
        per_view["psnr"].append(psnr(image, gt_image))
        if min(view.shape) >= 11:
            per_view["ssim"].append(ssim(image, gt_image))
        if np.any(depth.valid & gt_depth.valid):
            per_view["depth_mae"].append(depth_mae(depth, gt_depth))
        predicted.append(backproject_depth(view, depth).points)
        reference.append(backproject_depth(view, gt_depth).points)

    metrics = {name: float(np.mean(values)) for name, values in per_view.items() if values}
    pred_cloud, gt_cloud = PointCloud(np.concatenate(predicted)), PointCloud(np.concatenate(reference))
    if len(pred_cloud) and len(gt_cloud):
        metrics.update(cloud_metrics(pred_cloud, gt_cloud, cloud_threshold, downsample=cloud_threshold / 2).as_dict())
    return metrics


def _choose(backend: RenderingBackend, train_views: List[View], remaining: Dict[str, View],
            scores: List[ViewScore], config: LoopConfig, policy: SelectionPolicy, round_index: int) -> View:
    if config.refine is None or not policy.kind.startswith("warprf"):
        return remaining[select_next(scores)]
    refined = []
    for item in _ranked(scores)[:config.refine.k]:
        view = refine_pose(backend, train_views, remaining[item.view_id], config.refine.radius,
                           config.refine.iters, config.seed + round_index, config.penalty, config.nearest_k)
        refined.append((view, image_uncertainty(backend, train_views, view, config.penalty, config.nearest_k)))
    best = select_next([ViewScore(view.id, score.score) for view, score in refined])
    return next(view for view, _ in refined if view.id == best)


def run_active_loop(backend_factory: Callable[[], RenderingBackend], gt_backend: RenderingBackend,
                    config: LoopConfig, policy: SelectionPolicy,
                    on_round: Optional[Callable[[RoundRecord], None]] = None) -> List[RoundRecord]:
    """Fit, score the unused pool, add the best view with its ground truth, evaluate; repeat."""
    train_views = initial_views(config)
    used = {view.id for view in train_views}
    training: List[Tuple[View, ImageBuffer]] = [(view, gt_backend.render(view)[0]) for view in train_views]
    backend = backend_factory()
    if backend.trainable:
        console.print("[yellow]⚠ Opacity reset has no voxel-field counterpart; skipped[/yellow]")

    records: List[RoundRecord] = []
    console.print(f"[bold blue]Active loop: {policy.kind}, {config.rounds} rounds, "
                  f"{len(config.candidate_pool)} candidates[/bold blue]")
    for round_index in range(1, config.rounds + 1):
        if round_index > 1 and not config.warm_start:
            backend = backend_factory()
        if backend.trainable and training and config.fit_budget_per_round > 0:
            backend.fit(training, config.fit_budget_per_round, config.seed)

        remaining = {view.id: view for view in config.candidate_pool if view.id not in used}
        if not remaining:
            raise PoolExhaustedError(f"candidate pool exhausted after {len(records)} of {config.rounds} rounds", records)
        scores = score_candidates(backend, train_views, list(remaining.values()), policy,
                                  config.penalty, config.nearest_k, config.threads)
        chosen = _choose(backend, train_views, remaining, scores, config, policy, round_index)

        used.add(chosen.id)
        train_views.append(chosen)
        training.append((chosen, gt_backend.render(chosen)[0]))
        metrics = evaluate_views(backend, gt_backend, config.eval_views, config.cloud_threshold)

        record = RoundRecord(round_index, chosen.id, scores, metrics, chosen.pose)
        records.append(record)
        console.print(f"[green]✓ Round {round_index}: selected {chosen.id}[/green]")
        if on_round is not None:
            on_round(record)

    display_rounds(records)
    return records


def display_rounds(records: Sequence[RoundRecord]) -> None:
    table = Table(title="Active loop")
    table.add_column("Round", justify="right", style="cyan")
    table.add_column("Selected", style="white")
    table.add_column("Score", justify="right", style="green")
    table.add_column("PSNR", justify="right")
    table.add_column("Depth MAE", justify="right")
    for record in records:
        best = max((s.score for s in record.scores if s.view_id == record.selected_view), default=float("nan"))
        table.add_row(
            str(record.round),
            record.selected_view,
            f"{best:.4f}",
            f"{record.metrics_after_fit['psnr']:.2f}" if "psnr" in record.metrics_after_fit else "-",
            f"{record.metrics_after_fit['depth_mae']:.4f}" if "depth_mae" in record.metrics_after_fit else "-",
        )
    console.print(table)
