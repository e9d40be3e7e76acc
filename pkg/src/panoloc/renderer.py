"""Z-buffered point-splat rendering of equirectangular views.

A view at pose (R, t) colors each pixel with the nearest cloud point whose
splat covers it; pixels never hit stay invalid. Ranges tie-break (within
1e-9 m) by lower point index, which makes rendering fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import NonIntegerShift
from .geometry import Pose, rot_z
from .scene_io import Panorama, PointCloud

_RANGE_QUANTUM = 1e-9


@dataclass(frozen=True)
class SyntheticView:
    """A rendered panorama plus per-point visibility bookkeeping.

    point_pixel: (N, 2) integer (row, col) of each point's landing pixel
    (the z-buffer cell its center fell into); point_visible marks points
    that won the z-buffer at their landing pixel.
    """

    image: Panorama
    pose: Pose
    point_pixel: np.ndarray
    point_visible: np.ndarray


def render_view(cloud: PointCloud, pose: Pose, image_height: int,
                splat_radius: int = 1) -> SyntheticView:
    """Render the cloud from `pose` into an H x 2H panorama.

    Points at the camera center are skipped silently. Each point is splatted
    as a (2r+1)^2 square around its landing pixel; the z-buffer keeps the
    nearest point per pixel.
    """
    if image_height < 32:
        raise ValueError("image_height must be >= 32")
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    H, W = image_height, 2 * image_height
    n = len(cloud)
    # fused transform + projection on a contiguous (3, N) layout; this is the
    # pipeline's hottest loop, and column-major access plus BLAS overhead on
    # skinny matrices make the generic apply_pose/project path ~3x slower
    x, y, z = cloud.positions_t()
    R, t = pose.rotation, pose.translation
    cx = R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0]
    cy = R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1]
    cz = R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2]
    rng = np.sqrt(cx * cx + cy * cy + cz * cz)
    ok = rng >= 1e-12
    u = (np.arctan2(cy, cx) / (2.0 * np.pi) + 0.5) * W - 0.5
    v = (0.5 - np.arcsin(np.clip(cz / np.maximum(rng, 1e-12), -1.0, 1.0))
         / np.pi) * H - 0.5

    col = np.mod(np.rint(u).astype(np.int64), W)
    row = np.clip(np.rint(v).astype(np.int64), 0, H - 1)
    idx_all = np.arange(n)

    # z-buffer key packs (quantized range, point index) so the per-pixel min
    # keeps the nearest point, lowest index on ties; keys are kept in float64,
    # which is exact as long as they stay below 2**53 (guarded below)
    qrng = np.rint(rng / _RANGE_QUANTUM)
    exact_float = not ok.any() or qrng[ok].max() * n + n < 2.0**53
    landing = row * W + col
    kernel = np.ones((2 * splat_radius + 1, 2 * splat_radius + 1), dtype=np.uint8)
    if exact_float:
        key = qrng * n + idx_all
        keybuf = np.full(H * W, np.inf)
        np.minimum.at(keybuf, landing[ok], key[ok])
        # splats: a pixel's winner is the best key in the (2r+1)^2 window,
        # with azimuthal wrap in u; rows beyond the image don't contribute
        if splat_radius > 0:
            r = splat_radius
            kf = keybuf.reshape(H, W)
            padded = np.full((H + 2 * r, W + 2 * r), np.inf)
            padded[r:-r, r:-r] = kf
            padded[r:-r, :r] = kf[:, -r:]
            padded[r:-r, -r:] = kf[:, :r]
            winner_key = cv2.erode(padded, kernel)[r:-r, r:-r].reshape(-1)
        else:
            winner_key = keybuf
        hit = np.isfinite(winner_key)
        # unpack the point index; floor-division is exact for integer-valued
        # float keys below 2**53 and far cheaper than a float mod
        wk = winner_key[hit]
        win_idx = (wk - np.floor(wk / n) * n).astype(np.int64)
    else:
        # keys too large for float64: pack in int64 and rank-compress so the
        # float min-filter stays exact
        key = qrng.astype(np.int64) * n + idx_all
        sentinel = np.iinfo(np.int64).max
        keybuf = np.full(H * W, sentinel, dtype=np.int64)
        np.minimum.at(keybuf, landing[ok], key[ok])
        if splat_radius > 0:
            r = splat_radius
            uniq, ranks = np.unique(keybuf, return_inverse=True)
            kf = ranks.reshape(H, W).astype(np.float64)
            padded = np.full((H + 2 * r, W + 2 * r), float(len(uniq)))
            padded[r:-r, r:-r] = kf
            padded[r:-r, :r] = kf[:, -r:]
            padded[r:-r, -r:] = kf[:, :r]
            eroded = cv2.erode(padded, kernel)[r:-r, r:-r]
            win_rank = np.minimum(eroded.astype(np.int64).reshape(-1),
                                  len(uniq) - 1)
            winner_key = uniq[win_rank]
        else:
            winner_key = keybuf
        hit = winner_key != sentinel
        win_idx = np.mod(winner_key[hit], n)
    pixels = np.zeros((H, W, 3))
    valid = np.zeros(H * W, dtype=bool)
    valid[hit] = True
    pixels.reshape(-1, 3)[hit] = cloud.colors[win_idx]
    valid = valid.reshape(H, W)

    # a point is visible iff it won the z-buffer at its own landing pixel
    point_visible = ok & (keybuf[landing] == key)
    point_pixel = np.stack([row, col], axis=1)

    return SyntheticView(Panorama(pixels, valid), pose, point_pixel, point_visible)


def yaw_shift_view(view: SyntheticView, alpha: float) -> SyntheticView:
    """Cyclically shift a view by a yaw that is an integer number of pixels.

    Equivalent to re-rendering at the yawed pose; raises NonIntegerShift when
    alpha is not a multiple of one pixel's azimuth.
    """
    W = view.image.width
    shift_f = alpha * W / (2.0 * np.pi)
    k = int(round(shift_f))
    if abs(shift_f - k) > 1e-6:
        raise NonIntegerShift(f"yaw {alpha} is {shift_f} pixels, not an integer")
    k_mod = k % W
    pixels = np.roll(view.image.pixels, k_mod, axis=1)
    valid = np.roll(view.image.valid, k_mod, axis=1)
    Rz = rot_z(2.0 * np.pi * k / W)
    pose = Pose(Rz @ view.pose.rotation, Rz @ view.pose.translation)
    point_pixel = view.point_pixel.copy()
    point_pixel[:, 1] = np.mod(point_pixel[:, 1] + k_mod, W)
    return SyntheticView(Panorama(pixels, valid), pose, point_pixel,
                         view.point_visible.copy())
