"""
Experiment workflows: turn an ExperimentConfig into scenes, views and backends, and
run each CLI subcommand end to end, writing its files into a ResultBundle.
"""

import json
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console

from helpers import active_helper, backend_helper, io_helper, voxel_helper
from helpers.active_helper import initial_views, run_active_loop, score_candidates, select_next
from helpers.backend_helper import DegradedBackend, OracleBackend, RenderingBackend, VoxelBackend
from helpers.config_helper import BackendConfig, ExperimentConfig, ViewSetConfig
from helpers.geometry_helper import ring_views, sphere_views
from helpers.io_helper import ResultBundle
from helpers.metrics_helper import ause_curves, cloud_metrics, depth_mae, evaluation_mask, psnr, ssim
from helpers.models import (
    AnalyticScene,
    Box,
    Checker,
    DegradationSpec,
    Intrinsics,
    Light,
    LoopConfig,
    Plane,
    PoolExhaustedError,
    Pose,
    PreconditionError,
    Region,
    RefineSettings,
    RoundRecord,
    SelectionPolicy,
    Sphere,
    View,
)
from helpers.uncertainty_helper import image_uncertainty, pixel_uncertainty

console = Console(stderr=True)

_CONSOLES = (console, active_helper.console, backend_helper.console, io_helper.console, voxel_helper.console)


def set_quiet(quiet: bool) -> None:
    for each in _CONSOLES:
        each.quiet = quiet


# Builders


def build_intrinsics(config: ExperimentConfig) -> Intrinsics:
    camera = config.camera
    cx = (camera.width - 1) / 2 if camera.cx is None else camera.cx
    cy = (camera.height - 1) / 2 if camera.cy is None else camera.cy
    return Intrinsics(camera.fx, camera.fy, cx, cy, camera.width, camera.height)


def build_views(view_set: ViewSetConfig, intrinsics: Intrinsics) -> List[View]:
    if view_set.kind == "ring":
        return ring_views(intrinsics, view_set.count, view_set.radius, view_set.height,
                          view_set.look_at, view_set.phase, view_set.prefix)
    if view_set.kind == "sphere":
        return sphere_views(intrinsics, view_set.count, view_set.radius, view_set.look_at,
                            view_set.min_elevation, view_set.prefix)
    views = []
    for pose in view_set.poses:
        if pose.eye is not None:
            camera = Pose.look_at(pose.eye, pose.look_at, pose.up)
        else:
            camera = Pose(np.array(pose.rotation, dtype=np.float64), np.array(pose.translation, dtype=np.float64))
        views.append(View(intrinsics, camera, pose.id))
    return views


def build_scene(config: ExperimentConfig) -> AnalyticScene:
    primitives = []
    for item in config.scene.primitives:
        checker = None if item.checker_scale is None else Checker(item.checker_scale, item.checker_albedo)
        if item.kind == "sphere":
            primitives.append(Sphere(item.center, item.radius, item.albedo, checker))
        elif item.kind == "box":
            primitives.append(Box(item.minimum, item.maximum, item.albedo, checker))
        else:
            primitives.append(Plane(item.normal, item.offset, item.extent, item.albedo, checker))
    light = Light(config.scene.light_direction, config.scene.ambient)
    return AnalyticScene(tuple(primitives), config.scene.background, light)


def build_degradation(backend: BackendConfig, seed: int) -> DegradationSpec:
    d = backend.degradation
    region = Region(d.region.kind, d.region.rect, d.region.box_min, d.region.box_max, d.region.center,
                    d.region.azimuth_start, d.region.azimuth_end)
    return DegradationSpec(region, d.depth_bias, d.depth_noise_sigma, d.color_noise_sigma, seed,
                           d.view_ids, d.deleted_primitives)


def build_backend(backend: BackendConfig, config: ExperimentConfig) -> RenderingBackend:
    if config.scene.checkpoint is not None and backend.kind != "voxel":
        # a checkpointed scene is its own oracle
        return VoxelBackend(voxel_helper.load_checkpoint(config.scene.checkpoint), cache_size=backend.cache_size)
    if backend.kind == "oracle":
        return OracleBackend(build_scene(config), backend.cache_size)
    if backend.kind == "degraded":
        return DegradedBackend(build_scene(config), build_degradation(backend, config.seed), backend.cache_size)
    v = backend.voxel
    field = voxel_helper.VoxelField.create(
        v.resolution, v.bounds_min, v.bounds_max, v.step, v.near, v.far, v.init_density, v.init_noise,
        seed=config.seed, background=config.scene.background, weight_threshold=v.weight_threshold,
        normalize_depth=v.normalize_depth,
    )
    return VoxelBackend(field, v.learning_rate, v.ray_batch, v.momentum, backend.cache_size)


def backend_factory(config: ExperimentConfig) -> Callable[[], RenderingBackend]:
    return lambda: build_backend(config.backend, config)


def build_loop_config(config: ExperimentConfig, rounds: Optional[int] = None, threads: Optional[int] = None) -> LoopConfig:
    intrinsics = build_intrinsics(config)
    loop = config.loop
    refine = loop.refine
    return LoopConfig(
        candidate_pool=tuple(build_views(config.candidates, intrinsics)),
        rounds=loop.rounds if rounds is None else rounds,
        fit_budget_per_round=loop.fit_budget_per_round,
        initial_view_ids=loop.initial_view_ids,
        num_initial=loop.num_initial,
        initial_views=tuple(build_views(config.initial, intrinsics)) if config.initial is not None else (),
        eval_views=tuple(build_views(config.eval, intrinsics)),
        refine=RefineSettings(refine.k, refine.radius, refine.iters) if refine.enabled else None,
        seed=config.seed,
        warm_start=loop.warm_start,
        penalty=config.uncertainty.penalty,
        nearest_k=config.uncertainty.nearest_k,
        cloud_threshold=config.metrics.cloud_threshold,
        threads=config.threads if threads is None else threads,
    )


def build_policy(config: ExperimentConfig, kind: Optional[str] = None) -> SelectionPolicy:
    return SelectionPolicy(kind or config.policy.kind, config.policy_seed)


def training_split(config: ExperimentConfig, loop: LoopConfig) -> Tuple[List[View], List[View]]:
    """(source views, remaining candidates) for one-shot scoring."""
    sources = initial_views(loop)
    used = {view.id for view in sources}
    return sources, [view for view in loop.candidate_pool if view.id not in used]


def prepared_backend(config: ExperimentConfig, gt: RenderingBackend, sources: Sequence[View]) -> RenderingBackend:
    """The configured backend, fitted on the source views first when it is trainable."""
    backend = build_backend(config.backend, config)
    if backend.trainable and sources and config.loop.fit_budget_per_round > 0:
        training = [(view, gt.render(view)[0]) for view in sources]
        backend.fit(training, config.loop.fit_budget_per_round, config.seed)
    return backend


def ground_truth(config: ExperimentConfig) -> RenderingBackend:
    return build_backend(config.ground_truth, config)


def _metric_columns(config: ExperimentConfig) -> List[str]:
    columns = []
    for name in config.metrics.names:
        columns.extend(["acc", "comp", "cr", "precision", "recall", "f1"] if name == "cloud" else [name])
    return columns


# Workflows


def render_views(config: ExperimentConfig, bundle: ResultBundle, view_set: str = "candidates") -> int:
    intrinsics = build_intrinsics(config)
    chosen = {"candidates": config.candidates, "initial": config.initial, "eval": config.eval}[view_set]
    if chosen is None:
        raise PreconditionError(f"the config defines no {view_set} view set")
    backend = build_backend(config.backend, config)
    views = build_views(chosen, intrinsics)
    console.print(f"[bold blue]Rendering {len(views)} views with the {config.backend.kind} backend[/bold blue]")
    for view in views:
        image, depth = backend.render(view)
        io_helper.write_ppm(bundle.path(f"renders/{view.id}.ppm"), image)
        io_helper.write_depth(bundle.path(f"renders/{view.id}_depth.pfm"), depth)
        if isinstance(backend, DegradedBackend):
            _, _, error = backend.render_with_error(view)
            io_helper.write_pfm(bundle.path(f"renders/{view.id}_error.pfm"), error)
    return len(views)


def uncertainty_scores(config: ExperimentConfig, bundle: ResultBundle, mode: Optional[str] = None) -> List:
    mode = mode or config.uncertainty.mode
    loop = build_loop_config(config)
    sources, targets = training_split(config, loop)
    if not sources or not targets:
        raise PreconditionError("uncertainty needs both source views and target views")
    gt = ground_truth(config)
    backend = prepared_backend(config, gt, sources)
    console.print(f"[bold blue]{mode.title()} uncertainty for {len(targets)} targets "
                  f"from {len(sources)} sources[/bold blue]")
    rows = []
    for target in targets:
        if mode == "pixel":
            umap = pixel_uncertainty(backend, sources, target, config.uncertainty.nearest_k)
            io_helper.write_uncertainty(bundle.path(f"uncertainty/{target.id}.pfm"), umap)
            rows.append([target.id, umap.total(), float(np.mean(umap.valid))])
        else:
            score = image_uncertainty(backend, sources, target, config.uncertainty.penalty, config.uncertainty.nearest_k)
            rows.append([score.view_id, score.score, score.covered_fraction])
        if isinstance(backend, DegradedBackend):
            _, _, error = backend.render_with_error(target)
            io_helper.write_pfm(bundle.path(f"uncertainty/{target.id}_error.pfm"), error)
    io_helper.write_csv(bundle.path("uncertainty.csv"), io_helper.SCORE_COLUMNS, rows)
    return rows


def ause_from_files(uncertainty_path, error_path, bundle: ResultBundle, mask_path=None, num_bins: int = 100) -> float:
    uncertainty, u_valid = io_helper.read_pfm(uncertainty_path)
    error, e_valid = io_helper.read_pfm(error_path)
    if uncertainty.shape != error.shape:
        raise PreconditionError(f"uncertainty {uncertainty.shape} and error {error.shape} differ in shape")
    maps = [u_valid, e_valid, np.isfinite(uncertainty), np.isfinite(error)]
    if mask_path is not None:
        mask, m_valid = io_helper.read_pfm(mask_path)
        maps += [m_valid, mask > 0]
    mask = evaluation_mask(*maps)
    value, curve, oracle = ause_curves(uncertainty, error, mask, num_bins)
    io_helper.write_csv(bundle.path("sparsification.csv"), ("fraction", "uncertainty_mae", "oracle_mae"),
                        zip(curve.fractions.tolist(), curve.normalized.tolist(), oracle.normalized.tolist()))
    return value


def select_view(config: ExperimentConfig, bundle: ResultBundle, policy_kind: Optional[str] = None) -> str:
    loop = build_loop_config(config)
    sources, candidates = training_split(config, loop)
    gt = ground_truth(config)
    backend = prepared_backend(config, gt, sources)
    policy = build_policy(config, policy_kind)
    scores = score_candidates(backend, sources, candidates, policy, loop.penalty, loop.nearest_k, loop.threads)
    selected = select_next(scores)
    io_helper.write_csv(bundle.path("scores.csv"), io_helper.SCORE_COLUMNS,
                        [[s.view_id, s.score, s.covered_fraction] for s in scores])
    console.print(f"[green]✓ Selected {selected} with the {policy.kind} policy[/green]")
    return selected


def active_loop(config: ExperimentConfig, bundle: ResultBundle, policy_kind: Optional[str] = None,
                rounds: Optional[int] = None, threads: Optional[int] = None) -> List[RoundRecord]:
    loop = build_loop_config(config, rounds, threads)
    policy = build_policy(config, policy_kind)
    gt = ground_truth(config)
    log_path = bundle.fresh("rounds.jsonl")
    columns = _metric_columns(config)

    def log_round(record: RoundRecord) -> None:
        io_helper.append_jsonl(log_path, record.to_dict())

    def flush(records: Sequence[RoundRecord]) -> None:
        io_helper.write_csv(bundle.path("rounds.csv"), list(io_helper.ROUND_COLUMNS) + columns,
                            io_helper.round_rows(records, columns))
        io_helper.write_trajectory(bundle.path("trajectory.json"), records)

    try:
        records = run_active_loop(backend_factory(config), gt, loop, policy, on_round=log_round)
    except PoolExhaustedError as exc:
        flush(exc.records)
        raise
    flush(records)
    return records


def pairwise_metrics(kind: str, first, second, threshold: float = 0.05,
                     downsample: Optional[float] = None) -> Dict[str, float]:
    if kind == "image":
        a, b = io_helper.read_ppm(first), io_helper.read_ppm(second)
        result = {"psnr": psnr(a, b)}
        if min(a.shape) >= 11:
            result["ssim"] = ssim(a, b)
        return result
    if kind == "depth":
        return {"depth_mae": depth_mae(io_helper.read_depth(first), io_helper.read_depth(second))}
    if kind == "cloud":
        pred, gt = io_helper.read_xyz(first), io_helper.read_xyz(second)
        return cloud_metrics(pred, gt, threshold, downsample).as_dict()
    raise PreconditionError(f"unknown metrics kind {kind!r}")


def write_metrics(bundle: ResultBundle, metrics: Dict[str, float]) -> None:
    names = sorted(metrics)
    io_helper.write_csv(bundle.path("metrics.csv"), names, [[metrics[name] for name in names]])
    with open(bundle.path("metrics.json"), "w", encoding="utf-8") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
        f.write("\n")
