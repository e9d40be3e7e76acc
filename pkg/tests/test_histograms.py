"""Patch histograms, intersections, color matching and the rotation fast path."""

import numpy as np
import pytest

from panoloc.errors import GridMismatch
from panoloc.geometry import Pose, rot_z, sample_rotations
from panoloc.histograms import (ColorMap, PatchGrid, apply_color_map,
                                compute_histograms, fast_rotated_histograms,
                                fit_color_map, intersection,
                                intersection_many, precompute_rotation_tables,
                                rotation_lookup, warp_centroid)
from panoloc.renderer import render_view, yaw_shift_view
from panoloc.scene_io import Panorama, PointCloud


def uniform_pano(rng, H=64):
    return Panorama(rng.uniform(size=(H, 2 * H, 3)),
                    np.ones((H, 2 * H), dtype=bool))


# --- grid -------------------------------------------------------------------

def test_grid_must_divide_image():
    with pytest.raises(ValueError):
        PatchGrid(7, 16, 64, 128)


def test_patch_of_pixel_row_major():
    grid = PatchGrid(4, 8, 64, 128)
    assert grid.patch_of_pixel(0, 0) == 0
    assert grid.patch_of_pixel(0, 127) == 7
    assert grid.patch_of_pixel(63, 0) == 3 * 8
    assert grid.patch_of_pixel(17, 33) == 1 * 8 + 2


def test_centroids_are_patch_centers():
    grid = PatchGrid(2, 4, 32, 64)
    c = grid.centroids()
    assert c.shape == (8, 2)
    assert c[0, 0] == pytest.approx(7.5)   # first patch, u center
    assert c[0, 1] == pytest.approx(7.5)   # first patch, v center


# --- histogram computation --------------------------------------------------

def test_histograms_normalized_per_channel(rng):
    grid = PatchGrid(4, 8, 64, 128)
    h = compute_histograms(uniform_pano(rng), grid, 8)
    assert h.data.shape == (32, 3, 8)
    assert np.allclose(h.data.sum(axis=2), 1.0)


def test_constant_image_concentrates_one_bin():
    H = 64
    px = np.full((H, 2 * H, 3), 0.7)
    pano = Panorama(px, np.ones((H, 2 * H), dtype=bool))
    h = compute_histograms(pano, PatchGrid(4, 8, H, 2 * H), 8)
    # 0.7 * 8 = 5.6 -> bin 5 gets everything
    assert np.allclose(h.data[:, :, 5], 1.0)
    assert np.allclose(h.data.sum(axis=2), 1.0)


def test_top_bin_captures_color_one():
    H = 64
    px = np.ones((H, 2 * H, 3))
    pano = Panorama(px, np.ones((H, 2 * H), dtype=bool))
    h = compute_histograms(pano, PatchGrid(4, 8, H, 2 * H), 8)
    assert np.allclose(h.data[:, :, 7], 1.0)


def test_invalid_pixels_are_not_counted(rng):
    H = 64
    px = rng.uniform(size=(H, 2 * H, 3))
    valid = np.zeros((H, 2 * H), dtype=bool)
    pano = Panorama(px, valid)
    h = compute_histograms(pano, PatchGrid(4, 8, H, 2 * H), 8)
    assert np.all(h.data == 0.0)
    assert np.all(h.valid_count == 0)


def test_grid_mismatch_raises(rng):
    with pytest.raises(GridMismatch):
        compute_histograms(uniform_pano(rng, 64), PatchGrid(4, 8, 32, 64), 8)


# --- intersection -----------------------------------------------------------

def test_intersection_of_identical_is_one(rng):
    h = rng.uniform(size=(3, 8))
    h /= h.sum(axis=1, keepdims=True)
    assert intersection(h, h) == pytest.approx(1.0)


def test_intersection_of_disjoint_is_zero():
    a = np.zeros((3, 8))
    b = np.zeros((3, 8))
    a[:, 0] = 1.0
    b[:, 7] = 1.0
    assert intersection(a, b) == 0.0


def test_intersection_symmetric_and_bounded(rng):
    a = rng.uniform(size=(3, 8)); a /= a.sum(axis=1, keepdims=True)
    b = rng.uniform(size=(3, 8)); b /= b.sum(axis=1, keepdims=True)
    ab, ba = intersection(a, b), intersection(b, a)
    assert ab == pytest.approx(ba)
    assert 0.0 <= ab <= 1.0


def test_intersection_many_matches_scalar(rng):
    a = rng.uniform(size=(5, 3, 8)); a /= a.sum(axis=2, keepdims=True)
    b = rng.uniform(size=(5, 3, 8)); b /= b.sum(axis=2, keepdims=True)
    many = intersection_many(a, b)
    scalar = [intersection(a[i], b[i]) for i in range(5)]
    assert np.allclose(many, scalar)


# --- color matching ---------------------------------------------------------

def test_color_map_recovers_affine_shift(rng):
    n = 20000
    colors = rng.uniform(0.2, 0.8, size=(n, 3))
    cloud = PointCloud(rng.normal(size=(n, 3)), colors)
    H = 50
    orig = colors[:H * 2 * H].reshape(H, 2 * H, 3)
    px = np.clip(orig * 0.8 + 0.1, 0, 1)
    query = Panorama(px, np.ones((H, 2 * H), dtype=bool))
    cmap = fit_color_map(query, cloud)
    mapped = apply_color_map(cmap, query)
    # mapping should undo the affine distortion almost everywhere
    assert np.abs(mapped.pixels - orig).mean() < 0.02


def test_color_map_tables_monotone(rng):
    cloud = PointCloud(rng.normal(size=(500, 3)), rng.uniform(size=(500, 3)))
    cmap = fit_color_map(uniform_pano(rng, 32), cloud)
    assert np.all(np.diff(cmap.tables, axis=1) >= -1e-12)


def test_color_map_rejects_bad_tables():
    with pytest.raises(ValueError):
        ColorMap(np.linspace(1, 0, 256)[None].repeat(3, axis=0))


def test_color_map_identity_when_distributions_match(rng):
    colors = rng.uniform(size=(8192, 3))
    cloud = PointCloud(rng.normal(size=(8192, 3)), colors)
    H = 32
    px = colors[:2048].reshape(H, 2 * H, 3)
    query = Panorama(px, np.ones((H, 2 * H), dtype=bool))
    cmap = fit_color_map(query, cloud)
    assert np.abs(cmap.tables - np.arange(256) / 255.0).mean() < 0.03


# --- rotation fast path -----------------------------------------------------

def test_warp_centroid_identity_fixed_point():
    u, v = 31.5, 15.5
    uu, vv = warp_centroid(u, v, 1.0, Pose.identity(), 32, 64)
    assert uu == pytest.approx(u) and vv == pytest.approx(v)


def test_rotation_lookup_identity_is_trivial():
    grid = PatchGrid(4, 8, 64, 128)
    lut = rotation_lookup(grid, np.eye(3))
    assert np.array_equal(lut, np.arange(grid.n_patches))


def test_patch_aligned_yaw_permutes_columns():
    grid = PatchGrid(4, 8, 64, 128)
    # novel view yawed by exactly one patch width
    alpha = 2 * np.pi / 8
    lut = rotation_lookup(grid, rot_z(alpha).T)
    expected = np.arange(grid.n_patches).reshape(4, 8)
    # the rotated view's column c shows what the cached view saw at c - 1
    expected = np.roll(expected, 1, axis=1).ravel()
    assert np.array_equal(lut, expected)


def test_fast_path_bit_exact_for_patch_aligned_yaw(rng):
    pts = rng.normal(size=(5000, 3)) * 2.0
    cloud = PointCloud(pts, rng.uniform(size=(5000, 3)))
    H = 64
    grid = PatchGrid(4, 8, H, 2 * H)
    base = render_view(cloud, Pose.identity(), H)
    cached = compute_histograms(base.image, grid, 8)
    alpha = 2 * np.pi / 8
    rotated = yaw_shift_view(base, alpha)
    oracle = compute_histograms(rotated.image, grid, 8)
    fast = fast_rotated_histograms(cached, rot_z(alpha).T)
    assert np.array_equal(fast.data, oracle.data)


def test_precompute_tables_match_individual_lookups():
    grid = PatchGrid(4, 8, 64, 128)
    Rs = [R.T for R in sample_rotations(5, 9)]
    tables = precompute_rotation_tables(grid, Rs)
    assert tables.shape == (5, grid.n_patches)
    for i, R in enumerate(Rs):
        assert np.array_equal(tables[i], rotation_lookup(grid, R))
