"""Patch-grid color histograms and the fast cached-histogram machinery.

A panorama is divided into a rows x cols grid of equal patches; each patch
gets one B-bin histogram per RGB channel, normalized over its valid pixels.
Histograms of a rotated view at the same camera position are approximated
without re-rendering: warp each patch centroid by the pure rotation, then
copy the cached histogram of the nearest original centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePoint, GridMismatch
from .geometry import Pose, project, unproject
from .scene_io import Panorama, PointCloud

# patches with fewer valid pixels than this fraction are zeroed out
MIN_VALID_FRACTION = 0.01


@dataclass(frozen=True)
class PatchGrid:
    """Regular patch grid over an H x W image; rows | H and cols | W."""

    rows: int
    cols: int
    height: int
    width: int

    def __post_init__(self):
        if self.height % self.rows or self.width % self.cols:
            raise ValueError("grid must divide the image size evenly")

    @property
    def patch_height(self) -> int:
        return self.height // self.rows

    @property
    def patch_width(self) -> int:
        return self.width // self.cols

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def centroids(self) -> np.ndarray:
        """(rows*cols, 2) patch centroid (u, v) coordinates, row-major order."""
        us = (np.arange(self.cols) + 0.5) * self.patch_width - 0.5
        vs = (np.arange(self.rows) + 0.5) * self.patch_height - 0.5
        uu, vv = np.meshgrid(us, vs)
        return np.stack([uu.ravel(), vv.ravel()], axis=1)

    def patch_of_pixel(self, row, col):
        """Flat patch index containing integer pixel (row, col)."""
        return (np.asarray(row) // self.patch_height) * self.cols \
            + np.asarray(col) // self.patch_width


@dataclass(frozen=True)
class PatchHistograms:
    """Per-patch per-channel histograms: data (rows*cols, 3, B); valid_count
    holds the number of valid pixels behind each patch (0 = unusable)."""

    grid: PatchGrid
    bins: int
    data: np.ndarray
    valid_count: np.ndarray


@dataclass(frozen=True)
class ColorMap:
    """Per-channel monotone lookup tables (3, 256) mapping query colors onto
    the cloud's color distribution (the 1-D optimal transport map)."""

    tables: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tables, dtype=np.float64)
        object.__setattr__(self, "tables", t)
        if t.shape != (3, 256):
            raise ValueError("tables must be (3, 256)")
        if np.any(np.diff(t, axis=1) < -1e-12):
            raise ValueError("tables must be nondecreasing")


def compute_histograms(image: Panorama, grid: PatchGrid, bins: int) -> PatchHistograms:
    """Count valid pixels of each patch into per-channel B-bin histograms.

    Bin index is floor(c * B) clamped to B-1; each channel is normalized to
    sum 1. Patches with under MIN_VALID_FRACTION valid pixels are zeroed.
    """
    if (image.height, image.width) != (grid.height, grid.width):
        raise GridMismatch(
            f"image {image.height}x{image.width} vs grid {grid.height}x{grid.width}")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    H, W = grid.height, grid.width
    ph, pw = grid.patch_height, grid.patch_width
    # (rows, cols, ph, pw, 3) patch blocks
    px = image.pixels.reshape(grid.rows, ph, grid.cols, pw, 3).transpose(0, 2, 1, 3, 4)
    vm = image.valid.reshape(grid.rows, ph, grid.cols, pw).transpose(0, 2, 1, 3)
    px = px.reshape(grid.n_patches, ph * pw, 3)
    vm = vm.reshape(grid.n_patches, ph * pw)

    bin_idx = np.minimum((px * bins).astype(np.int64), bins - 1)
    data = np.zeros((grid.n_patches, 3, bins))
    patch_ids = np.broadcast_to(np.arange(grid.n_patches)[:, None], vm.shape)
    for ch in range(3):
        flat = patch_ids[vm] * bins + bin_idx[:, :, ch][vm]
        counts = np.bincount(flat, minlength=grid.n_patches * bins)
        data[:, ch, :] = counts.reshape(grid.n_patches, bins)
    valid_count = vm.sum(axis=1)
    usable = valid_count >= max(1, int(np.ceil(MIN_VALID_FRACTION * ph * pw)))
    data[~usable] = 0.0
    valid_count = np.where(usable, valid_count, 0)
    sums = data.sum(axis=2, keepdims=True)
    np.divide(data, sums, out=data, where=sums > 0)
    return PatchHistograms(grid, bins, data, valid_count)


def intersection(a: np.ndarray, b: np.ndarray) -> float:
    """Histogram intersection of two (3, B) histograms, averaged over
    channels; 0 if either side is all-zero."""
    if not a.any() or not b.any():
        return 0.0
    return float(np.minimum(a, b).sum() / 3.0)


def intersection_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched histogram intersection over matching leading dimensions.

    a, b: (..., P, 3, B); returns (..., P) with zeros where either operand
    has no mass.
    """
    scores = np.minimum(a, b).sum(axis=(-1, -2)) / 3.0
    mass_a = a.sum(axis=(-1, -2))
    mass_b = b.sum(axis=(-1, -2))
    return np.where((mass_a > 0) & (mass_b > 0), scores, 0.0)


def fit_color_map(query: Panorama, cloud: PointCloud, levels: int = 256) -> ColorMap:
    """Monotone CDF matching from query channel statistics onto the cloud's.

    table[v] = Q_cloud(F_query(v/255)) per channel, the discrete 1-D optimal
    transport map between the two empirical color distributions.
    """
    grid_vals = np.arange(256) / 255.0
    tables = np.empty((3, 256))
    for ch in range(3):
        q = np.sort(query.pixels[:, :, ch][query.valid])
        c = np.sort(cloud.colors[:, ch])
        if q.size == 0:
            tables[ch] = grid_vals
            continue
        cdf = np.searchsorted(q, grid_vals, side="right") / q.size
        tables[ch] = np.quantile(c, np.clip(cdf, 0.0, 1.0))
    return ColorMap(np.clip(tables, 0.0, 1.0))


def apply_color_map(cmap: ColorMap, image: Panorama) -> Panorama:
    """Pointwise lookup of the color map on every pixel."""
    idx = np.clip(np.round(image.pixels * 255.0), 0, 255).astype(np.int64)
    out = np.empty_like(image.pixels)
    for ch in range(3):
        out[:, :, ch] = cmap.tables[ch][idx[:, :, ch]]
    return Panorama(out, image.valid.copy())


def warp_centroid(u: float, v: float, depth: float, rel_pose: Pose,
                  image_height: int, image_width: int):
    """Map a patch centroid through a relative pose at a given depth.

    Implements p = project(R * (depth * unproject(c)) + t). For the
    pure-rotation fast path pass depth=1 and a zero-translation pose.
    """
    d = unproject(u, v, image_height, image_width)
    p = rel_pose.rotation @ (depth * d) + rel_pose.translation
    if np.linalg.norm(p) < 1e-12:
        raise DegeneratePoint("warped centroid hits the camera center")
    return project(p, image_height, image_width)


def rotation_lookup(grid: PatchGrid, rel_rotation: np.ndarray) -> np.ndarray:
    """Nearest cached-patch index for each novel-view patch under a pure
    rotation; distance uses wrapped-u Euclidean pixel distance."""
    cents = grid.centroids()
    dirs = unproject(cents[:, 0], cents[:, 1], grid.height, grid.width)
    warped = dirs @ rel_rotation.T
    u, v = project(warped, grid.height, grid.width)
    du = np.abs(cents[None, :, 0] - u[:, None])
    du = np.minimum(du, grid.width - du)
    dv = cents[None, :, 1] - v[:, None]
    return np.argmin(du * du + dv * dv, axis=1)


def fast_rotated_histograms(cached: PatchHistograms, rel_rotation: np.ndarray,
                            lookup: np.ndarray = None) -> PatchHistograms:
    """Approximate the patch histograms of a rotated view from cached ones.

    rel_rotation maps novel-view camera directions into the cached view's
    camera frame. Every output histogram is a copy of some cached histogram;
    nothing is rendered.
    """
    if lookup is None:
        lookup = rotation_lookup(cached.grid, rel_rotation)
    return PatchHistograms(cached.grid, cached.bins,
                           cached.data[lookup], cached.valid_count[lookup])


def precompute_rotation_tables(grid: PatchGrid, rotations) -> np.ndarray:
    """Stack of rotation_lookup tables, one row per relative rotation.

    Depends only on (grid, rotations); amortizes the nearest-centroid search
    across every translation that shares the rotation list.
    """
    return np.stack([rotation_lookup(grid, R) for R in rotations], axis=0)
