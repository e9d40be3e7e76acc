"""Sampling loss, analytic gradients and Adam pose refinement."""

import numpy as np
import pytest

from panoloc.errors import EmptyInput
from panoloc.geometry import Pose, exp_so3, sample_rotations, unproject
from panoloc.refine import (RefineConfig, RefineResult, refine_pose,
                            sample_image, sampling_loss, select_final)
from panoloc.renderer import render_view
from panoloc.scene_io import Panorama, PointCloud
from panoloc.scoremap import ScoreMap3D


def uniform_weights(n):
    return ScoreMap3D(np.ones(n), np.zeros(n, dtype=np.int64))


def shell_cloud(rng, n=8000):
    pts = rng.uniform(-1, 1, size=(n, 3))
    face = rng.integers(0, 3, n)
    sign = rng.choice([-1.0, 1.0], n)
    pts[np.arange(n), face] = sign * 2.0
    colors = np.clip(0.5 + 0.35 * np.sin(pts @ rng.normal(size=(3, 3))), 0, 1)
    return PointCloud(pts, colors)


# --- bilinear sampling ------------------------------------------------------

def test_sample_image_at_pixel_centers(rng):
    px = rng.uniform(size=(8, 16, 3))
    pano = Panorama(px, np.ones((8, 16), dtype=bool))
    u = np.array([0.0, 5.0, 15.0])
    v = np.array([0.0, 3.0, 7.0])
    out = sample_image(pano, u, v)
    assert np.allclose(out, px[v.astype(int), u.astype(int)])


def test_sample_image_interpolates_midpoints(rng):
    px = rng.uniform(size=(8, 16, 3))
    pano = Panorama(px, np.ones((8, 16), dtype=bool))
    out = sample_image(pano, np.array([2.5]), np.array([3.0]))
    assert np.allclose(out[0], 0.5 * (px[3, 2] + px[3, 3]))


def test_sample_image_wraps_azimuth(rng):
    px = rng.uniform(size=(8, 16, 3))
    pano = Panorama(px, np.ones((8, 16), dtype=bool))
    out = sample_image(pano, np.array([15.5]), np.array([4.0]))
    assert np.allclose(out[0], 0.5 * (px[4, 15] + px[4, 0]))


def test_sample_image_gradient_matches_finite_difference(rng):
    px = rng.uniform(size=(16, 32, 3))
    pano = Panorama(px, np.ones((16, 32), dtype=bool))
    u = rng.uniform(0.2, 30.8, 50)
    v = rng.uniform(1.2, 14.8, 50)
    # keep fractional parts away from cell boundaries
    u = np.floor(u) + np.clip(u - np.floor(u), 0.2, 0.8)
    v = np.floor(v) + np.clip(v - np.floor(v), 0.2, 0.8)
    _, d_du, d_dv = sample_image(pano, u, v, with_gradient=True)
    h = 1e-6
    fd_u = (sample_image(pano, u + h, v) - sample_image(pano, u - h, v)) / (2 * h)
    fd_v = (sample_image(pano, u, v + h) - sample_image(pano, u, v - h)) / (2 * h)
    assert np.allclose(d_du, fd_u, atol=1e-6)
    assert np.allclose(d_dv, fd_v, atol=1e-6)


# --- sampling loss ----------------------------------------------------------

def test_loss_zero_when_colors_match(rng):
    # points whose colors exactly equal the panorama at their projections
    H, W = 32, 64
    px = rng.uniform(size=(H, W, 3))
    pano = Panorama(px, np.ones((H, W), dtype=bool))
    uu, vv = np.meshgrid(np.arange(10, 50), np.arange(8, 24))
    dirs = unproject(uu.ravel().astype(float), vv.ravel().astype(float), H, W)
    pts = dirs * 2.0
    cloud = PointCloud(pts, px[vv.ravel(), uu.ravel()])
    loss = sampling_loss(Pose.identity(), cloud, pano, uniform_weights(len(cloud)),
                         np.arange(len(cloud)), with_gradient=False)
    assert loss < 1e-12


def test_loss_scales_with_weights(rng):
    cloud = shell_cloud(rng, 2000)
    H = 32
    pano = Panorama(rng.uniform(size=(H, 2 * H, 3)), np.ones((H, 2 * H), dtype=bool))
    sub = np.arange(len(cloud))
    l1 = sampling_loss(Pose.identity(), cloud, pano, uniform_weights(len(cloud)),
                       sub, with_gradient=False)
    half = ScoreMap3D(np.full(len(cloud), 0.5), np.zeros(len(cloud), dtype=np.int64))
    l2 = sampling_loss(Pose.identity(), cloud, pano, half, sub,
                       with_gradient=False)
    assert l2 == pytest.approx(0.5 * l1)


def test_gradient_matches_finite_difference(rng):
    # points placed to project into bilinear-cell interiors so the loss is
    # smooth within the finite-difference stencil
    H, W = 64, 128
    px = rng.uniform(size=(H, W, 3))
    pano = Panorama(px, np.ones((H, W), dtype=bool))
    n = 300
    u = rng.integers(0, W, n) + rng.uniform(0.2, 0.8, n)
    v = rng.integers(int(0.1 * H), int(0.9 * H), n) + rng.uniform(0.2, 0.8, n)
    pose = Pose(sample_rotations(1, 8)[0], rng.normal(size=3) * 0.1)
    dirs = unproject(u, v, H, W) * rng.uniform(0.5, 5.0, n)[:, None]
    pts = (dirs - pose.translation) @ pose.rotation
    cloud = PointCloud(pts, rng.uniform(size=(n, 3)))
    w = ScoreMap3D(rng.uniform(0.2, 1.0, n), np.zeros(n, dtype=np.int64))
    sub = np.arange(n)

    loss, grad = sampling_loss(pose, cloud, pano, w, sub)
    h = 1e-5
    fd = np.empty(6)
    for i in range(6):
        delta = np.zeros(6)
        delta[i] = h
        pp = Pose(exp_so3(delta[:3]) @ pose.rotation, pose.translation + delta[3:])
        pm = Pose(exp_so3(-delta[:3]) @ pose.rotation, pose.translation - delta[3:])
        lp = sampling_loss(pp, cloud, pano, w, sub, with_gradient=False)
        lm = sampling_loss(pm, cloud, pano, w, sub, with_gradient=False)
        fd[i] = (lp - lm) / (2 * h)
    rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)
    assert rel.max() < 1e-4


def test_all_points_at_center_gives_zero(rng):
    cloud = PointCloud(np.zeros((5, 3)), rng.uniform(size=(5, 3)))
    pano = Panorama(rng.uniform(size=(32, 64, 3)), np.ones((32, 64), dtype=bool))
    loss, grad = sampling_loss(Pose.identity(), cloud, pano,
                               uniform_weights(5), np.arange(5))
    assert loss == 0.0 and np.all(grad == 0.0)


# --- refinement -------------------------------------------------------------

@pytest.fixture(scope="module")
def refine_setup():
    rng = np.random.default_rng(21)
    cloud = shell_cloud(rng, 20000)
    gt = Pose.from_camera_center(exp_so3(np.array([0.02, -0.03, 0.4])),
                                 np.array([0.2, -0.1, 0.05]))
    query = render_view(cloud, gt, 128).image
    return cloud, gt, query


def test_refine_reduces_loss_and_error(refine_setup):
    cloud, gt, query = refine_setup
    start = Pose(exp_so3(np.array([0.0, 0.0, 0.05])) @ gt.rotation,
                 gt.translation + np.array([0.06, -0.04, 0.03]))
    w = uniform_weights(len(cloud))
    res = refine_pose(start, cloud, query, w, RefineConfig(iterations=150))
    assert res.final_loss < res.loss_trace[0]
    d0 = np.linalg.norm(start.camera_center - gt.camera_center)
    d1 = np.linalg.norm(res.pose.camera_center - gt.camera_center)
    assert d1 < 0.5 * d0


def test_refine_from_truth_stays_put(rng):
    # points colored exactly as the panorama sees them: the loss has its
    # global minimum at the true pose, so refinement must not wander off
    H, W = 64, 128
    pano = Panorama(rng.uniform(size=(H, W, 3)), np.ones((H, W), dtype=bool))
    n = 5000
    gt = Pose.from_camera_center(exp_so3(np.array([0.01, 0.02, 0.3])),
                                 np.array([0.1, -0.2, 0.05]))
    u = rng.uniform(-0.5, W - 0.5, n)
    v = rng.uniform(0.1 * H, 0.9 * H, n)
    dirs = unproject(u, v, H, W) * rng.uniform(0.5, 4.0, n)[:, None]
    pts = (dirs - gt.translation) @ gt.rotation
    cloud = PointCloud(pts, sample_image(pano, u, v))
    res = refine_pose(gt, cloud, pano, uniform_weights(n),
                      RefineConfig(iterations=100))
    from panoloc.geometry import rotation_error
    assert np.linalg.norm(res.pose.camera_center - gt.camera_center) < 0.005
    assert np.degrees(rotation_error(res.pose.rotation, gt.rotation)) < 0.1


def test_refine_deterministic(refine_setup):
    cloud, gt, query = refine_setup
    start = Pose(gt.rotation, gt.translation + np.array([0.05, 0.0, 0.0]))
    w = uniform_weights(len(cloud))
    cfg = RefineConfig(iterations=30)
    a = refine_pose(start, cloud, query, w, cfg)
    b = refine_pose(start, cloud, query, w, cfg)
    assert np.array_equal(a.pose.rotation, b.pose.rotation)
    assert np.array_equal(a.pose.translation, b.pose.translation)
    assert np.array_equal(a.loss_trace, b.loss_trace)


def test_refine_point_budget_subsets(refine_setup):
    cloud, gt, query = refine_setup
    w = uniform_weights(len(cloud))
    cfg = RefineConfig(iterations=5, point_budget=500)
    res = refine_pose(gt, cloud, query, w, cfg)
    assert len(res.loss_trace) == 6


def test_refine_result_rotation_stays_orthonormal(refine_setup):
    cloud, gt, query = refine_setup
    start = Pose(gt.rotation, gt.translation + np.array([0.1, 0.1, 0.0]))
    res = refine_pose(start, cloud, query, uniform_weights(len(cloud)),
                      RefineConfig(iterations=50))
    R = res.pose.rotation
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-10)


def test_refine_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(iterations=0)
    with pytest.raises(ValueError):
        RefineConfig(step_size=-1.0)
    with pytest.raises(ValueError):
        RefineConfig(beta1=1.5)


def test_select_final_picks_lowest_loss():
    mk = lambda l: RefineResult(Pose.identity(), l, np.array([l]), True)
    results = [mk(0.3), mk(0.1), mk(0.2), mk(0.1)]
    assert select_final(results) is results[1]
    with pytest.raises(EmptyInput):
        select_final([])
