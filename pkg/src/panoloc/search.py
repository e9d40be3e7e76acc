"""Candidate pose search: free-space partitioning, rotation enumeration and
score-weighted histogram ranking.

Translations are proposed at the centers of empty partition cells (largest
first). For each translation a single view is rendered; histograms for every
candidate rotation come from the fast cached-histogram path, and candidates
are ranked by the 2D-score-weighted histogram intersection with the query.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyCandidateSet, NoFreeSpace
from .geometry import Pose
from .histograms import (PatchGrid, PatchHistograms, compute_histograms,
                         fast_rotated_histograms, intersection_many,
                         precompute_rotation_tables)
from .renderer import SyntheticView, render_view
from .scene_io import PointCloud
from .scoremap import ScoreMap2D


@dataclass(frozen=True)
class Cell:
    center: np.ndarray
    size: float
    occupied: bool


@dataclass(frozen=True)
class FreeSpacePartition:
    """Leaf cells of an octree or uniform grid over the cloud's bounding box."""

    mode: str
    cells: tuple

    def empty_cells(self):
        return [c for c in self.cells if not c.occupied]


@dataclass(frozen=True)
class CandidatePose:
    pose: Pose
    weighted_score: float
    translation_index: int
    rotation_index: int


def build_partition(cloud: PointCloud, mode: str = "octree",
                    max_depth: int = 5, grid_cell: float = 1.0) -> FreeSpacePartition:
    """Partition the cloud's bounding box into occupied/empty cells.

    Octree mode subdivides occupied cells down to max_depth; empty cells
    become leaves immediately. Uniform mode tiles the box at grid_cell
    meters. A cell is occupied iff it contains at least one point.
    """
    pos = cloud.positions
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    if mode == "octree":
        root_size = float(np.max(hi - lo))
        if root_size <= 0:
            root_size = 1.0
        cells = []

        def subdivide(corner, size, points, depth):
            half = size / 2.0
            for ox in (0, 1):
                for oy in (0, 1):
                    for oz in (0, 1):
                        c_lo = corner + half * np.array([ox, oy, oz], dtype=float)
                        inside = np.all((points >= c_lo) & (points <= c_lo + half),
                                        axis=1)
                        occupied = bool(inside.any())
                        if occupied and depth < max_depth:
                            subdivide(c_lo, half, points[inside], depth + 1)
                        else:
                            cells.append(Cell(c_lo + half / 2.0, half, occupied))

        if max_depth < 1:
            cells.append(Cell(lo + root_size / 2.0, root_size, True))
        else:
            subdivide(lo.copy(), root_size, pos, 1)
        return FreeSpacePartition("octree", tuple(cells))
    if mode == "uniform-grid":
        counts = np.maximum(1, np.ceil((hi - lo) / grid_cell).astype(int))
        cells = []
        occupied_idx = np.floor((pos - lo) / grid_cell).astype(int)
        occupied_idx = np.minimum(occupied_idx, counts - 1)
        occ = set(map(tuple, occupied_idx))
        for ix in range(counts[0]):
            for iy in range(counts[1]):
                for iz in range(counts[2]):
                    center = lo + grid_cell * (np.array([ix, iy, iz]) + 0.5)
                    cells.append(Cell(center, grid_cell, (ix, iy, iz) in occ))
        return FreeSpacePartition("uniform-grid", tuple(cells))
    raise ValueError(f"unknown partition mode {mode!r}")


def propose_translations(partition: FreeSpacePartition, n_translations: int,
                         height_range: Optional[tuple] = None):
    """Centers of empty cells, largest cell first, truncated to n_translations.

    Returns (list of 3-vectors, truncated flag); the flag is True when fewer
    empty cells exist than requested. Deterministic: ties on size break by
    center coordinates.
    """
    if n_translations < 1:
        raise ValueError("n_translations must be >= 1")
    empty = partition.empty_cells()
    if height_range is not None:
        zmin, zmax = height_range
        empty = [c for c in empty if zmin <= c.center[2] <= zmax]
    if not empty:
        raise NoFreeSpace("partition has no empty cells in range")
    empty.sort(key=lambda c: (-c.size, c.center[0], c.center[1], c.center[2]))
    truncated = len(empty) < n_translations
    return [c.center.copy() for c in empty[:n_translations]], truncated


def rank_candidates(query_hists: PatchHistograms, scoremap2d: ScoreMap2D,
                    translations: Sequence[np.ndarray],
                    rotations: Sequence[np.ndarray], cloud: PointCloud,
                    render_height: int, k: int,
                    splat_radius: int = 1,
                    cached_views: Optional[Sequence[SyntheticView]] = None,
                    n_filter: Optional[int] = None,
                    render_counter: Optional[list] = None):
    """Rank all translation x rotation poses by weighted histogram
    intersection and return the top k.

    Renders exactly one view per translation (at identity rotation) and
    produces every rotated variant through the precomputed lookup tables.
    w(Y) = sum_i M_i * intersection_i; ties break by (translation index,
    rotation index). Optionally pre-filters translations to the n_filter
    best by their unrotated view's score.

    cached_views may supply the per-translation identity-rotation renders to
    avoid re-rendering; render_counter (a list) gets one append per render
    actually performed.
    """
    translations = list(translations)
    rotations = list(rotations)
    if not translations or not rotations:
        raise EmptyCandidateSet("need at least one translation and rotation")
    if k < 1 or k > len(translations) * len(rotations):
        raise ValueError("k must be in [1, |translations|*|rotations|]")
    grid = query_hists.grid
    weights = scoremap2d.scores

    views = list(cached_views) if cached_views is not None else [None] * len(translations)
    cached_hists = []
    for ti, t in enumerate(translations):
        if views[ti] is None:
            views[ti] = render_view(cloud, Pose.from_camera_center(np.eye(3), t),
                                    render_height, splat_radius)
            if render_counter is not None:
                render_counter.append(ti)
        cached_hists.append(compute_histograms(views[ti].image, grid,
                                               query_hists.bins))

    trans_idx = list(range(len(translations)))
    if n_filter is not None and n_filter < len(translations):
        base = np.array([
            float(np.sum(weights * intersection_many(ch.data, query_hists.data)))
            for ch in cached_hists])
        keep = np.argsort(-base, kind="stable")[:n_filter]
        trans_idx = sorted(int(i) for i in keep)

    # rel_rotation maps novel directions into the cached (identity) frame
    tables = precompute_rotation_tables(grid, [R.T for R in rotations])

    scored = []
    for ti in trans_idx:
        ch = cached_hists[ti]
        rotated = ch.data[tables]          # (N_r, P, 3, B)
        lam = intersection_many(rotated, query_hists.data[None])
        w = (lam * weights[None]).sum(axis=1)
        for ri in range(len(rotations)):
            scored.append((float(w[ri]), ti, ri))
    scored.sort(key=lambda s: (-s[0], s[1], s[2]))

    out = []
    for score, ti, ri in scored[:k]:
        R = rotations[ri]
        pose = Pose.from_camera_center(R, translations[ti])
        out.append(CandidatePose(pose, score, ti, ri))
    return out
