"""End-to-end localization pipeline, evaluation metrics and artifact dumps.

Stage order: color matching -> per-translation renders -> first-pass
rotation scoring -> 2D score map -> 3D score map -> weighted candidate
ranking -> per-candidate refinement -> final selection. Each score-map and
initialization stage can be disabled independently; disabled maps fall back
to uniform weights, and disabled histogram initialization ranks candidates
by their sampling-loss value instead.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import cv2
import numpy as np

from .errors import ConfigError, MissingGroundTruth, IoError
from .geometry import Pose, rotation_error, sample_rotations
from .histograms import (PatchGrid, apply_color_map, compute_histograms,
                         fast_rotated_histograms, fit_color_map,
                         intersection_many, precompute_rotation_tables)
from .refine import RefineConfig, RefineResult, refine_pose, sampling_loss, select_final
from .renderer import render_view
from .scene_io import (Panorama, PointCloud, load_panorama, load_pointcloud,
                       save_panorama, save_pointcloud)
from .scoremap import (ScoreMap2D, ScoreMap3D, build_2d_scoremap,
                       build_3d_scoremap_fast)
from .search import build_partition, propose_translations, rank_candidates


@dataclass(frozen=True)
class PipelineConfig:
    height: int = 128
    grid_rows: int = 8
    grid_cols: int = 16
    bins: int = 8
    n_translations: int = 50
    n_rotations: int = 256
    k: int = 5
    n_filter: Optional[int] = None
    partition_mode: str = "octree"
    partition_depth: int = 5
    top_r: int = 8                  # rotations per translation in the score-map view set
    splat_radius: int = 1
    height_range: Optional[tuple] = None
    loss_rank_points: int = 1024    # subset size for loss-based ranking (ablation)
    refine: RefineConfig = field(default_factory=RefineConfig)
    seed: int = 0
    color_match: bool = True
    use_2d_map: bool = True
    use_3d_map: bool = True
    histogram_init: bool = True

    def __post_init__(self):
        for name in ("height", "grid_rows", "grid_cols", "bins",
                     "n_translations", "n_rotations", "k", "top_r"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if self.height % self.grid_rows or (2 * self.height) % self.grid_cols:
            raise ConfigError("patch grid must divide the image size")


# flat key=value config file keys -> (attribute, parser)
_CONFIG_KEYS = {
    "height": int, "grid_rows": int, "grid_cols": int, "bins": int,
    "n_translations": int, "n_rotations": int, "k": int, "n_filter": int,
    "partition_mode": str, "partition_depth": int, "top_r": int,
    "splat_radius": int, "loss_rank_points": int, "seed": int,
    "color_match": None, "use_2d_map": None, "use_3d_map": None,
    "histogram_init": None,
}
_REFINE_KEYS = {"iterations": int, "step_size": float, "beta1": float,
                "beta2": float, "epsilon": float, "point_budget": int,
                "refine_seed": int}


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def load_config(path: str) -> PipelineConfig:
    """Read a flat key=value config file with # comments."""
    values = {}
    refine_values = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise IoError(str(e)) from e
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _CONFIG_KEYS:
            parser = _CONFIG_KEYS[key]
            values[key] = _parse_bool(val) if parser is None else parser(val)
        elif key in _REFINE_KEYS:
            attr = "seed" if key == "refine_seed" else key
            refine_values[attr] = _REFINE_KEYS[key](val)
        elif key == "height_range":
            zmin, zmax = (float(x) for x in val.split(","))
            values["height_range"] = (zmin, zmax)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    refine = RefineConfig(**refine_values) if refine_values else RefineConfig()
    try:
        return PipelineConfig(refine=refine, **values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


@dataclass
class LocalizationReport:
    pose: Pose
    final_loss: float
    candidates: list            # [(weighted_score, translation_idx, rotation_idx)]
    timings_ms: dict
    t_error: Optional[float] = None
    r_error_deg: Optional[float] = None
    correct: Optional[bool] = None

    def attach_ground_truth(self, gt_pose: Pose, tau_t: float = 0.05,
                            tau_r_deg: float = 5.0) -> None:
        self.t_error = float(np.linalg.norm(
            self.pose.camera_center - gt_pose.camera_center))
        self.r_error_deg = float(np.degrees(
            rotation_error(self.pose.rotation, gt_pose.rotation)))
        self.correct = bool(self.t_error < tau_t and self.r_error_deg < tau_r_deg)

    def to_dict(self, include_timings: bool = True) -> dict:
        d = {
            "pose": {
                "rotation": [[float(x) for x in row] for row in self.pose.rotation],
                "translation": [float(x) for x in self.pose.translation],
            },
            "final_loss": float(self.final_loss),
            "candidates": [
                {"weighted_score": float(s), "translation_index": int(ti),
                 "rotation_index": int(ri)} for s, ti, ri in self.candidates],
        }
        if self.t_error is not None:
            d["ground_truth"] = {"t_error_m": self.t_error,
                                 "r_error_deg": self.r_error_deg,
                                 "correct": self.correct}
        if include_timings:
            d["timings_ms"] = {k: float(v) for k, v in self.timings_ms.items()}
        return d

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "LocalizationReport":
        pose = Pose(np.array(d["pose"]["rotation"]),
                    np.array(d["pose"]["translation"]))
        rep = cls(pose, d["final_loss"],
                  [(c["weighted_score"], c["translation_index"],
                    c["rotation_index"]) for c in d["candidates"]],
                  dict(d.get("timings_ms", {})))
        gt = d.get("ground_truth")
        if gt:
            rep.t_error = gt["t_error_m"]
            rep.r_error_deg = gt["r_error_deg"]
            rep.correct = gt["correct"]
        return rep


def _resize_panorama(pano: Panorama, height: int) -> Panorama:
    if pano.height == height:
        return pano
    w = 2 * height
    px = cv2.resize(pano.pixels, (w, height), interpolation=cv2.INTER_AREA)
    valid = cv2.resize(pano.valid.astype(np.uint8), (w, height),
                       interpolation=cv2.INTER_NEAREST).astype(bool)
    return Panorama(np.clip(px, 0.0, 1.0), valid)


def localize_arrays(cloud: PointCloud, query: Panorama,
                    config: PipelineConfig) -> LocalizationReport:
    """Localize an in-memory panorama against an in-memory cloud."""
    timings = {}

    def tick():
        return time.perf_counter()

    t0 = tick()
    if config.color_match:
        cmap = fit_color_map(query, cloud)
        query = apply_color_map(cmap, query)
    # histogram stages run at the configured height; refinement samples the
    # query at its native resolution for precision
    query_full = query
    query = _resize_panorama(query, config.height)
    H, W = config.height, 2 * config.height
    grid = PatchGrid(config.grid_rows, config.grid_cols, H, W)
    timings["preprocess"] = (tick() - t0) * 1e3

    t0 = tick()
    partition = build_partition(cloud, config.partition_mode, config.partition_depth)
    translations, _ = propose_translations(partition, config.n_translations,
                                           config.height_range)
    rotations = list(sample_rotations(config.n_rotations, config.seed))
    query_hists = compute_histograms(query, grid, config.bins)

    cached_views = [render_view(cloud, Pose.from_camera_center(np.eye(3), t),
                                H, config.splat_radius)
                    for t in translations]
    cached_hists = [compute_histograms(v.image, grid, config.bins)
                    for v in cached_views]
    timings["render_views"] = (tick() - t0) * 1e3

    # first pass: unweighted intersection of every rotated variant
    t0 = tick()
    tables = precompute_rotation_tables(grid, [R.T for R in rotations])
    view_hist_pool = []
    entries_3d = []
    for ti, ch in enumerate(cached_hists):
        lam = intersection_many(ch.data[tables], query_hists.data[None])
        totals = lam.sum(axis=1)
        best = np.argsort(-totals, kind="stable")[:config.top_r]
        for ri in best:
            view_hist_pool.append(fast_rotated_histograms(ch, None,
                                                          lookup=tables[ri]))
            entries_3d.append((cached_views[ti], rotations[ri], lam[ri]))
    timings["first_pass"] = (tick() - t0) * 1e3

    t0 = tick()
    if config.use_2d_map:
        scoremap2d = build_2d_scoremap(query_hists, view_hist_pool)
    else:
        scoremap2d = ScoreMap2D(grid, np.ones(grid.n_patches))
    timings["scoremap_2d"] = (tick() - t0) * 1e3

    t0 = tick()
    if config.use_3d_map:
        scoremap3d = build_3d_scoremap_fast(cloud, entries_3d, grid, H)
    else:
        scoremap3d = ScoreMap3D(np.ones(len(cloud)), np.zeros(len(cloud), dtype=np.int64))
    timings["scoremap_3d"] = (tick() - t0) * 1e3

    t0 = tick()
    if config.histogram_init:
        candidates = rank_candidates(query_hists, scoremap2d, translations,
                                     rotations, cloud, H, config.k,
                                     config.splat_radius,
                                     cached_views=cached_views,
                                     n_filter=config.n_filter)
        cand_list = [(c.weighted_score, c.translation_index, c.rotation_index)
                     for c in candidates]
        cand_poses = [c.pose for c in candidates]
    else:
        # rank by the sampling-loss value at each candidate pose (lower wins)
        rng = np.random.default_rng(config.seed)
        n_rank = min(config.loss_rank_points, len(cloud))
        subset = np.sort(rng.choice(len(cloud), size=n_rank, replace=False))
        uniform = ScoreMap3D(np.ones(len(cloud)),
                             np.zeros(len(cloud), dtype=np.int64))
        scored = []
        for ti, t in enumerate(translations):
            for ri, R in enumerate(rotations):
                pose = Pose.from_camera_center(R, t)
                loss = sampling_loss(pose, cloud, query_full, uniform, subset,
                                     with_gradient=False)
                scored.append((loss, ti, ri, pose))
        scored.sort(key=lambda s: (s[0], s[1], s[2]))
        cand_list = [(-loss, ti, ri) for loss, ti, ri, _ in scored[:config.k]]
        cand_poses = [pose for _, _, _, pose in scored[:config.k]]
    timings["candidate_selection"] = (tick() - t0) * 1e3

    # coarse-to-fine: every candidate is refined against the working-height
    # query (wide, smooth basins); the winner is then re-refined against the
    # native-resolution query for precision
    t0 = tick()
    results = []
    coarse_budget = min(config.refine.point_budget, 8000)
    coarse_iters = min(config.refine.iterations, 120)
    for ci, pose in enumerate(cand_poses):
        cfg = replace(config.refine, seed=config.refine.seed + ci,
                      point_budget=coarse_budget, iterations=coarse_iters)
        results.append(refine_pose(pose, cloud, query, scoremap3d, cfg))
    final = select_final(results)
    if query_full.height != query.height:
        final = refine_pose(final.pose, cloud, query_full, scoremap3d,
                            config.refine)
    timings["refine"] = (tick() - t0) * 1e3

    return LocalizationReport(final.pose, final.final_loss, cand_list, timings)


def localize(cloud_path: str, pano_path: str,
             config: PipelineConfig) -> LocalizationReport:
    """Localize a panorama file against a PLY point cloud."""
    cloud = load_pointcloud(cloud_path)
    query = load_panorama(pano_path)
    return localize_arrays(cloud, query, config)


def evaluate(reports, tau_t: float = 0.05, tau_r_deg: float = 5.0) -> dict:
    """Median errors and joint-threshold accuracy over a report list.

    Medians take the lower middle element for even counts.
    """
    reports = list(reports)
    if not reports:
        raise MissingGroundTruth("no reports")
    for r in reports:
        if r.t_error is None or r.r_error_deg is None:
            raise MissingGroundTruth("report lacks ground truth errors")
    t_err = sorted(r.t_error for r in reports)
    r_err = sorted(r.r_error_deg for r in reports)
    mid = (len(reports) - 1) // 2
    correct = [r.t_error < tau_t and r.r_error_deg < tau_r_deg for r in reports]
    return {
        "median_t_error_m": t_err[mid],
        "median_r_error_deg": r_err[mid],
        "accuracy": sum(correct) / len(correct),
        "n": len(reports),
        "tau_t_m": tau_t,
        "tau_r_deg": tau_r_deg,
    }


def dump_scoremaps(cloud: PointCloud, query: Panorama, config: PipelineConfig,
                   out_dir: str):
    """Write the 2D score map as a PNG heatmap and the 3D map as a grayscale
    PLY; returns (scoremap2d, scoremap3d, png_path, ply_path)."""
    if not os.path.isdir(out_dir):
        raise IoError(f"not a directory: {out_dir!r}")
    query = _resize_panorama(query, config.height)
    H, W = config.height, 2 * config.height
    grid = PatchGrid(config.grid_rows, config.grid_cols, H, W)
    if config.color_match:
        query = apply_color_map(fit_color_map(query, cloud), query)
    partition = build_partition(cloud, config.partition_mode, config.partition_depth)
    translations, _ = propose_translations(partition, config.n_translations,
                                           config.height_range)
    rotations = list(sample_rotations(config.n_rotations, config.seed))
    query_hists = compute_histograms(query, grid, config.bins)
    tables = precompute_rotation_tables(grid, [R.T for R in rotations])

    view_hist_pool = []
    entries_3d = []
    for t in translations:
        view = render_view(cloud, Pose.from_camera_center(np.eye(3), t),
                           H, config.splat_radius)
        ch = compute_histograms(view.image, grid, config.bins)
        lam = intersection_many(ch.data[tables], query_hists.data[None])
        best = np.argsort(-lam.sum(axis=1), kind="stable")[:config.top_r]
        for ri in best:
            view_hist_pool.append(fast_rotated_histograms(ch, None,
                                                          lookup=tables[ri]))
            entries_3d.append((view, rotations[ri], lam[ri]))
    scoremap2d = build_2d_scoremap(query_hists, view_hist_pool)
    scoremap3d = build_3d_scoremap_fast(cloud, entries_3d, grid, H)

    png_path = os.path.join(out_dir, "scoremap2d.png")
    heat = np.clip(scoremap2d.to_image(), 0.0, 1.0)
    ok = cv2.imwrite(png_path, (heat * 255).astype(np.uint8))
    if not ok:
        raise IoError(f"cannot write {png_path!r}")
    ply_path = os.path.join(out_dir, "scoremap3d.ply")
    gray = np.repeat(np.clip(scoremap3d.scores, 0, 1)[:, None], 3, axis=1)
    save_pointcloud(PointCloud(cloud.positions, gray), ply_path)
    return scoremap2d, scoremap3d, png_path, ply_path


def bench_histograms(cloud: PointCloud, query: Panorama, config: PipelineConfig,
                     methods=("fast", "render")) -> list:
    """Per-synthetic-view cost of the fast histogram path vs. re-rendering.

    Returns [(method, per_view_ms)] for the requested methods, measured over
    config.n_rotations rotations at one translation.
    """
    query = _resize_panorama(query, config.height)
    H, W = config.height, 2 * config.height
    grid = PatchGrid(config.grid_rows, config.grid_cols, H, W)
    rotations = sample_rotations(config.n_rotations, config.seed)
    center = cloud.positions.mean(axis=0)
    base = render_view(cloud, Pose.from_camera_center(np.eye(3), center),
                       H, config.splat_radius)
    cached = compute_histograms(base.image, grid, config.bins)

    rows = []
    for method in methods:
        if method == "fast":
            t0 = time.perf_counter()
            tables = precompute_rotation_tables(grid, [R.T for R in rotations])
            for ri in range(len(rotations)):
                fast_rotated_histograms(cached, None, lookup=tables[ri])
            dt = time.perf_counter() - t0
        elif method == "render":
            # rendering amortizes badly; extrapolate from a sample of views
            n_sample = min(16, len(rotations))
            t0 = time.perf_counter()
            for R in rotations[:n_sample]:
                v = render_view(cloud, Pose.from_camera_center(R, center),
                                H, config.splat_radius)
                compute_histograms(v.image, grid, config.bins)
            dt = (time.perf_counter() - t0) * len(rotations) / n_sample
        else:
            raise ConfigError(f"unknown bench method {method!r}")
        rows.append((method, dt * 1e3 / len(rotations)))
    return rows
