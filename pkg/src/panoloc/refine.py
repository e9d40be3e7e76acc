"""Gradient-based pose refinement of the weighted color sampling loss.

The loss compares each 3D point's stored color with the panorama color
bilinearly sampled at its projection, weighted per point by the 3D score
map. Gradients over a 6-vector (left axis-angle increment, translation) are
analytic, and poses are updated with Adam, re-composing the rotation through
the exponential map so iterates stay on SO(3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput
from .geometry import Pose, apply_pose, exp_so3, project, skew
from .scene_io import Panorama, PointCloud
from .scoremap import ScoreMap3D


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 200
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    point_budget: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


@dataclass(frozen=True)
class RefineResult:
    pose: Pose
    final_loss: float
    loss_trace: np.ndarray
    converged: bool


def sample_image(image: Panorama, u: np.ndarray, v: np.ndarray,
                 with_gradient: bool = False):
    """Bilinear sample of an equirectangular image at continuous (u, v).

    Wraps azimuthally in u and clamps in v. Returns (N, 3) colors and, when
    requested, d(color)/du and d(color)/dv arrays of the same shape.
    """
    H, W = image.height, image.width
    px = image.pixels
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    c0 = np.mod(u0, W)
    c1 = np.mod(u0 + 1, W)
    r0 = np.clip(v0, 0, H - 1)
    r1 = np.clip(v0 + 1, 0, H - 1)
    flat = px.reshape(-1, 3)
    b0 = r0 * W
    b1 = r1 * W
    p00 = flat[b0 + c0]
    p01 = flat[b0 + c1]
    p10 = flat[b1 + c0]
    p11 = flat[b1 + c1]
    top = p00 * (1 - fu) + p01 * fu
    bot = p10 * (1 - fu) + p11 * fu
    colors = top * (1 - fv) + bot * fv
    if not with_gradient:
        return colors
    d_du = (p01 - p00) * (1 - fv) + (p11 - p10) * fv
    d_dv = bot - top
    # clamped rows have zero vertical slope at the boundary
    d_dv[np.asarray(v0 < 0) | np.asarray(v0 + 1 > H - 1)] = 0.0
    return colors, d_du, d_dv


def sampling_loss(pose: Pose, cloud: PointCloud, query: Panorama,
                  weights: ScoreMap3D, subset: np.ndarray,
                  with_gradient: bool = True):
    """Weighted color sampling loss and its analytic 6-vector gradient.

    loss = || w * (sample(project(R x + t)) - c) ||_2 / sqrt(|subset|); the
    gradient is over (left axis-angle increment, translation). Points at the
    camera center are skipped.
    """
    xyz = np.ascontiguousarray(cloud.positions[subset].T)
    c = cloud.colors[subset]
    w = weights.scores[subset]
    return _subset_loss(pose, xyz, c, w, query, with_gradient)


def _subset_loss(pose: Pose, xyz: np.ndarray, c: np.ndarray, w: np.ndarray,
                 query: Panorama, with_gradient: bool):
    """sampling_loss on pre-extracted subset data ((3, M) positions,
    (M, 3) colors, (M,) weights); the hot loop of refinement."""
    H, W = query.height, query.width
    n_sub = xyz.shape[1]
    x, y, z = xyz
    R, t = pose.rotation, pose.translation
    px = R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0]
    py = R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1]
    pz = R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2]
    rho2 = px * px + py * py
    r2 = rho2 + pz * pz
    ok = r2 >= 1e-24
    if not ok.any():
        if with_gradient:
            return 0.0, np.zeros(6)
        return 0.0
    if not ok.all():
        px, py, pz = px[ok], py[ok], pz[ok]
        rho2, r2 = rho2[ok], r2[ok]
        c, w = c[ok], w[ok]
    r = np.sqrt(r2)
    u = (np.arctan2(py, px) / (2.0 * np.pi) + 0.5) * W - 0.5
    v = (0.5 - np.arcsin(np.clip(pz / r, -1.0, 1.0)) / np.pi) * H - 0.5

    if with_gradient:
        sampled, d_du, d_dv = sample_image(query, u, v, with_gradient=True)
    else:
        sampled = sample_image(query, u, v)
    resid = w[:, None] * (sampled - c)          # (M, 3)
    sq = float(np.sum(resid * resid))
    loss = np.sqrt(sq) / np.sqrt(n_sub)
    if not with_gradient:
        return loss

    if loss < 1e-15:
        return loss, np.zeros(6)
    # per-point dl/dp collapses to a * du/dp + b * dv/dp with the scalars
    # a = sum_c resid_c * w * d(color_c)/du (and likewise for v), since the
    # image gradient enters every channel through the same (u, v)
    rho = np.sqrt(np.maximum(rho2, 1e-18))
    a = w * np.einsum("mc,mc->m", resid, d_du) * (W / (2.0 * np.pi))
    b = w * np.einsum("mc,mc->m", resid, d_dv) * (H / np.pi)
    b_rr = b * pz / (r2 * rho)
    g_p0 = -a * py / rho2 + b_rr * px
    g_p1 = a * px / rho2 + b_rr * py
    g_p2 = -b * rho / r2
    # chain through p = exp(omega) R x + t: dp/domega = -skew(R x), dp/dt = I
    X0, X1, X2 = px - t[0], py - t[1], pz - t[2]
    g_omega = np.array([np.sum(X1 * g_p2 - X2 * g_p1),
                        np.sum(X2 * g_p0 - X0 * g_p2),
                        np.sum(X0 * g_p1 - X1 * g_p0)])
    g_t = np.array([g_p0.sum(), g_p1.sum(), g_p2.sum()])
    grad = np.concatenate([g_omega, g_t]) / (loss * n_sub)
    return loss, grad


def refine_pose(candidate: Pose, cloud: PointCloud, query: Panorama,
                weights: ScoreMap3D, config: RefineConfig) -> RefineResult:
    """Minimize the sampling loss from `candidate` with Adam.

    A fixed random subset of at most point_budget points (seeded, constant
    across iterations) defines the objective, so the run is deterministic.
    """
    n = len(cloud)
    rng = np.random.default_rng(config.seed)
    if config.point_budget < n:
        subset = np.sort(rng.choice(n, size=config.point_budget, replace=False))
    else:
        subset = np.arange(n)

    xyz = np.ascontiguousarray(cloud.positions[subset].T)
    colors = cloud.colors[subset]
    w = weights.scores[subset]

    R = candidate.rotation.copy()
    t = candidate.translation.copy()
    m = np.zeros(6)
    v = np.zeros(6)
    trace = np.empty(config.iterations + 1)
    for it in range(config.iterations):
        loss, grad = _subset_loss(Pose(R, t), xyz, colors, w, query, True)
        trace[it] = loss
        m = config.beta1 * m + (1 - config.beta1) * grad
        v = config.beta2 * v + (1 - config.beta2) * grad * grad
        m_hat = m / (1 - config.beta1 ** (it + 1))
        v_hat = v / (1 - config.beta2 ** (it + 1))
        step = config.step_size * m_hat / (np.sqrt(v_hat) + config.epsilon)
        R = exp_so3(-step[:3]) @ R
        t = t - step[3:]
    final_pose = Pose(R, t)
    trace[-1] = _subset_loss(final_pose, xyz, colors, w, query, False)
    converged = bool(trace[-1] <= trace[max(1, config.iterations // 2)])
    return RefineResult(final_pose, float(trace[-1]), trace, converged)


def select_final(results) -> RefineResult:
    """Result with the smallest final loss; ties keep the earliest."""
    results = list(results)
    if not results:
        raise EmptyInput("no refinement results")
    best = results[0]
    for r in results[1:]:
        if r.final_loss < best.final_loss:
            best = r
    return best
