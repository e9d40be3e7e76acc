"""2D and 3D consistency score maps.

The 2D map weights query-image patches by the best histogram intersection
any synthetic view achieves there; the 3D map weights each cloud point by
the mean back-projected patch score over the views that actually see it.
Low scores flag likely scene changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyViewSet, GridMismatch
from .geometry import project
from .histograms import PatchGrid, PatchHistograms, compute_histograms, intersection_many
from .renderer import SyntheticView
from .scene_io import PointCloud

# score for points no view ever observed: neutral, neither trusted nor suspect
UNOBSERVED_SCORE = 0.5


@dataclass(frozen=True)
class ScoreMap2D:
    """Per-patch weights on the query image, in [0, 1]."""

    grid: PatchGrid
    scores: np.ndarray  # (rows*cols,)

    def to_image(self) -> np.ndarray:
        """Expand to a full (H, W) map by patch replication."""
        per_patch = self.scores.reshape(self.grid.rows, self.grid.cols)
        return np.kron(per_patch, np.ones((self.grid.patch_height,
                                           self.grid.patch_width)))


@dataclass(frozen=True)
class ScoreMap3D:
    """Per-point weights on the cloud, in [0, 1], plus how many views
    contributed to each point."""

    scores: np.ndarray  # (N,)
    counts: np.ndarray  # (N,)


def build_2d_scoremap(query_hists: PatchHistograms,
                      view_hists: Sequence[PatchHistograms]) -> ScoreMap2D:
    """Per-patch maximum intersection between the query and any view."""
    views = list(view_hists)
    if not views:
        raise EmptyViewSet("need at least one synthetic view")
    for vh in views:
        if vh.grid != query_hists.grid or vh.bins != query_hists.bins:
            raise GridMismatch("all view histograms must share the query's grid")
    stacked = np.stack([vh.data for vh in views], axis=0)  # (V, P, 3, B)
    scores = intersection_many(stacked, query_hists.data[None])
    return ScoreMap2D(query_hists.grid, scores.max(axis=0))


def build_3d_scoremap(cloud: PointCloud, views: Sequence[SyntheticView],
                      query_hists: PatchHistograms) -> ScoreMap3D:
    """Back-project per-patch intersections onto the points each view sees.

    Each point visible in a view receives that view's patch score at its
    landing pixel; scores are averaged over the views in which the point was
    visible, and points seen by no view get UNOBSERVED_SCORE.
    """
    grid = query_hists.grid
    n = len(cloud)
    acc = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for view in views:
        vh = compute_histograms(view.image, grid, query_hists.bins)
        patch_scores = intersection_many(vh.data, query_hists.data)
        vis = view.point_visible
        patch_idx = grid.patch_of_pixel(view.point_pixel[vis, 0],
                                        view.point_pixel[vis, 1])
        acc[vis] += patch_scores[patch_idx]
        counts[vis] += 1
    scores = np.full(n, UNOBSERVED_SCORE)
    seen = counts > 0
    scores[seen] = acc[seen] / counts[seen]
    return ScoreMap3D(scores, counts)


def build_3d_scoremap_fast(cloud: PointCloud, entries, grid: PatchGrid,
                           image_height: int) -> ScoreMap3D:
    """Back-project patch scores without rendering the rotated views.

    `entries` is a sequence of (identity_view, rotation, patch_scores): an
    identity-rotation render cached at some camera center, a candidate
    rotation at that center, and the per-patch intersection of the rotated
    view's (fast) histograms with the query. Visibility is taken from the
    identity render -- occlusion depends on the camera center, not its
    orientation -- and each visible point's landing patch in the rotated
    view comes from re-projecting it under that rotation.
    """
    if not entries:
        raise EmptyViewSet("need at least one view entry")
    H, W = image_height, 2 * image_height
    n = len(cloud)
    acc = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for view, rotation, patch_scores in entries:
        vis = view.point_visible
        cam = (cloud.positions[vis] - view.pose.camera_center) @ rotation.T
        u, v, okp = project(cam, H, W, strict=False)
        col = np.mod(np.rint(u).astype(np.int64), W)
        row = np.clip(np.rint(v).astype(np.int64), 0, H - 1)
        patch_idx = grid.patch_of_pixel(row, col)
        acc[vis] += np.where(okp, patch_scores[patch_idx], 0.0)
        counts[vis] += okp.astype(np.int64)
    scores = np.full(n, UNOBSERVED_SCORE)
    seen = counts > 0
    scores[seen] = acc[seen] / counts[seen]
    return ScoreMap3D(scores, counts)
