"""Point cloud / panorama I/O and synthetic scene generation.

File formats: PLY (ascii or binary_little_endian, vertex x,y,z + red,green,
blue uint8) for clouds, PNG (RGB, W = 2H) for panoramas.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import AspectError, InvalidSpec, IoError, MissingProperty, ParseError

_PLY_FLOAT_TYPES = {"float": np.float32, "float32": np.float32,
                    "double": np.float64, "float64": np.float64}


@dataclass(frozen=True)
class PointCloud:
    """Colored point cloud: (N, 3) positions in meters, (N, 3) colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        col = np.ascontiguousarray(np.asarray(self.colors, dtype=np.float64))
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must be (N>=1, 3), got {pos.shape}")
        if col.shape != pos.shape:
            raise ValueError("colors must match positions in shape")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain NaN/Inf")
        if np.any(col < 0.0) or np.any(col > 1.0) or not np.all(np.isfinite(col)):
            raise ValueError("colors must lie in [0, 1]")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def positions_t(self) -> np.ndarray:
        """Contiguous (3, N) transpose of positions, cached after first use.

        The renderer projects the same cloud hundreds of times per query and
        is memory-bound; a row-major coordinate layout keeps those loops on
        contiguous data.
        """
        cached = getattr(self, "_positions_t", None)
        if cached is None:
            cached = np.ascontiguousarray(self.positions.T)
            object.__setattr__(self, "_positions_t", cached)
        return cached


@dataclass(frozen=True)
class Panorama:
    """Equirectangular image: (H, W, 3) pixels in [0, 1] plus a validity mask."""

    pixels: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        px = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.float64))
        object.__setattr__(self, "pixels", px)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {px.shape}")
        h, w = px.shape[:2]
        if w != 2 * h:
            raise AspectError(f"panorama must have W = 2H, got {h}x{w}")
        if self.valid is None:
            valid = np.ones((h, w), dtype=bool)
        else:
            valid = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
            if valid.shape != (h, w):
                raise ValueError("validity mask must be (H, W)")
        object.__setattr__(self, "valid", valid)
        if np.any(px[valid] < 0.0) or np.any(px[valid] > 1.0):
            raise ValueError("valid pixel channels must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ChangeOp:
    """One entry of a scene change recipe.

    kind: 'recolor' (shift colors inside a box), 'delete' (drop points inside
    a box) or 'color_shift' (global affine color change).
    """

    kind: str
    lo: tuple = None          # box corner, recolor/delete
    hi: tuple = None          # box corner, recolor/delete
    color_delta: tuple = (0.0, 0.0, 0.0)   # recolor: per-channel shift
    scale: tuple = (1.0, 1.0, 1.0)         # color_shift: per-channel gain
    offset: tuple = (0.0, 0.0, 0.0)        # color_shift: per-channel offset


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a synthetic room scene.

    extents: interior size (x, y, z) in meters; density in points/m^2 over
    the room surfaces; changes applied to produce the 'changed' cloud.
    """

    extents: tuple = (6.0, 8.0, 3.0)
    density: float = 400.0
    texture_seed: int = 0
    changes: tuple = ()
    n_furniture: int = 4
    n_queries: int = 1
    query_height: int = 128
    # queries simulate photographs: they are rendered from a much denser
    # sampling of the same surfaces so the panorama has few holes, while the
    # localization map keeps `density`
    query_density: float = 25600.0
    # color field composition: slow room-scale waves plus an optional fine
    # dither; the dither widens local color distributions (helps histogram
    # overlap) but carves extra local minima into the sampling loss at its
    # own wavelength, so scenes meant for refinement can turn it down
    slow_wavelengths: tuple = (4.0, 2.0)
    slow_amplitude: float = 0.25
    dither_wavelength: float = 0.5
    dither_amplitude: float = 0.12

    def __post_init__(self):
        if len(self.extents) != 3 or min(self.extents) <= 0:
            raise InvalidSpec("extents must be three positive numbers")
        if self.density <= 0:
            raise InvalidSpec("density must be positive")


def scene_spec_from_json(text: str) -> SceneSpec:
    """Parse a SceneSpec from a JSON document."""
    import json

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidSpec(f"bad JSON: {e}") from e
    if not isinstance(doc, dict):
        raise InvalidSpec("scene spec must be a JSON object")
    try:
        changes = tuple(
            ChangeOp(kind=c["kind"],
                     lo=tuple(c["lo"]) if "lo" in c else None,
                     hi=tuple(c["hi"]) if "hi" in c else None,
                     color_delta=tuple(c.get("color_delta", (0, 0, 0))),
                     scale=tuple(c.get("scale", (1, 1, 1))),
                     offset=tuple(c.get("offset", (0, 0, 0))))
            for c in doc.get("changes", []))
        return SceneSpec(
            extents=tuple(doc.get("extents", (6.0, 8.0, 3.0))),
            density=float(doc.get("density", 400.0)),
            texture_seed=int(doc.get("texture_seed", 0)),
            changes=changes,
            n_furniture=int(doc.get("n_furniture", 4)),
            n_queries=int(doc.get("n_queries", 1)),
            query_height=int(doc.get("query_height", 128)))
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidSpec(f"bad scene spec: {e}") from e


def load_pointcloud(path: str) -> PointCloud:
    """Parse a PLY file into a PointCloud.

    Supports ascii and binary_little_endian, float32/float64 coordinates and
    uint8 colors (mapped to [0, 1]).
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(str(e)) from e
    header_end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or header_end < 0:
        raise ParseError("not a PLY file")
    header = raw[:header_end].decode("ascii", errors="replace").splitlines()
    body = raw[header_end + len(b"end_header\n"):]

    fmt = None
    n_vertex = None
    props = []  # (name, type) for the vertex element
    in_vertex = False
    for line in header[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append((tok[2], tok[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}")
    if n_vertex is None:
        raise ParseError("no vertex element")
    names = [p[0] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"missing coordinate property {axis!r}")
    if not all(c in names for c in ("red", "green", "blue")):
        raise MissingProperty("PLY has no red/green/blue vertex colors")

    def np_type(ply_type):
        if ply_type in _PLY_FLOAT_TYPES:
            return _PLY_FLOAT_TYPES[ply_type]
        if ply_type in ("uchar", "uint8"):
            return np.uint8
        raise ParseError(f"unsupported property type {ply_type!r}")

    dtype = np.dtype([(name, np_type(t)) for name, t in props])
    if fmt == "ascii":
        text = body.decode("ascii", errors="replace").split()
        expect = n_vertex * len(props)
        if len(text) < expect:
            raise ParseError("truncated PLY body")
        try:
            arr = np.array(text[:expect], dtype=np.float64).reshape(n_vertex, len(props))
        except ValueError as e:
            raise ParseError(f"bad ASCII vertex data: {e}") from e
        data = {name: arr[:, i] for i, (name, _) in enumerate(props)}
    else:
        if len(body) < n_vertex * dtype.itemsize:
            raise ParseError("truncated PLY body")
        rec = np.frombuffer(body, dtype=dtype, count=n_vertex)
        data = {name: rec[name].astype(np.float64) for name, _ in props}

    positions = np.stack([data["x"], data["y"], data["z"]], axis=1)
    colors = np.stack([data["red"], data["green"], data["blue"]], axis=1) / 255.0
    if not np.all(np.isfinite(positions)):
        raise ParseError("PLY contains NaN/Inf coordinates")
    return PointCloud(positions, np.clip(colors, 0.0, 1.0))


def save_pointcloud(cloud: PointCloud, path: str, binary: bool = True) -> None:
    """Write a PointCloud as PLY (binary little-endian by default)."""
    if not path:
        raise IoError("empty output path")
    n = len(cloud)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    try:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            if binary:
                rec = np.empty(n, dtype=np.dtype(
                    [("x", np.float32), ("y", np.float32), ("z", np.float32),
                     ("red", np.uint8), ("green", np.uint8), ("blue", np.uint8)]))
                rec["x"], rec["y"], rec["z"] = cloud.positions.T.astype(np.float32)
                rec["red"], rec["green"], rec["blue"] = rgb.T
                f.write(rec.tobytes())
            else:
                for p, c in zip(cloud.positions, rgb):
                    f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                            f"{c[0]} {c[1]} {c[2]}\n".encode("ascii"))
    except OSError as e:
        raise IoError(str(e)) from e


def load_panorama(path: str) -> Panorama:
    """Load an 8- or 16-bit RGB PNG as a Panorama (validity all-true)."""
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ParseError(f"cannot read image {path!r}")
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=2)
    if img.shape[2] == 4:
        img = img[:, :, :3]
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    rgb = img[:, :, ::-1].astype(np.float64) / scale
    h, w = rgb.shape[:2]
    if w != 2 * h:
        raise AspectError(f"panorama must have W = 2H, got {h}x{w}")
    return Panorama(rgb)


def save_panorama(pano: Panorama, path: str) -> None:
    """Write a Panorama as an 8-bit RGB PNG (invalid pixels written black)."""
    if not path:
        raise IoError("empty output path")
    px = np.where(pano.valid[:, :, None], pano.pixels, 0.0)
    img = np.clip(np.round(px * 255.0), 0, 255).astype(np.uint8)
    ok = cv2.imwrite(path, img[:, :, ::-1])
    if not ok:
        raise IoError(f"cannot write image {path!r}")


# ---------------------------------------------------------------------------
# Synthetic scenes


def _smooth_color_field(points: np.ndarray, seed: int,
                        slow_wavelengths=(16.0, 8.0), slow_amplitude=0.3,
                        dither_wavelength=0.3, dither_amplitude=0.12) -> np.ndarray:
    """Multi-scale sinusoidal color field: slow room-scale variation plus a
    fine dither. The slow part makes regions distinctive; the dither widens
    each local color distribution so patch histograms overlap gracefully
    under small viewpoint shifts."""
    rng = np.random.default_rng(seed)
    slow = np.zeros((points.shape[0], 3))
    for wavelength in slow_wavelengths:
        for ch in range(3):
            k = rng.standard_normal(3)
            k *= (2.0 * np.pi / wavelength) / np.linalg.norm(k)
            phase = rng.uniform(0, 2 * np.pi)
            slow[:, ch] += rng.uniform(0.5, 1.0) * np.sin(points @ k + phase)
    slow *= slow_amplitude / (np.max(np.abs(slow)) + 1e-9)
    fine = np.zeros_like(slow)
    for _ in range(3):
        for ch in range(3):
            k = rng.standard_normal(3)
            k *= (2.0 * np.pi / dither_wavelength) / np.linalg.norm(k)
            phase = rng.uniform(0, 2 * np.pi)
            fine[:, ch] += np.sin(points @ k + phase)
    if np.max(np.abs(fine)) > 0:
        fine *= dither_amplitude / np.max(np.abs(fine))
    return np.clip(0.5 + slow + fine, 0.0, 1.0)


def _sample_box_surface(lo, hi, density, rng):
    """Sample points on the 6 faces of an axis-aligned box at `density` pts/m^2."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    size = hi - lo
    pts = []
    for axis in range(3):
        a, b = (axis + 1) % 3, (axis + 2) % 3
        area = size[a] * size[b]
        n = max(1, int(round(area * density)))
        for face_val in (lo[axis], hi[axis]):
            p = np.empty((n, 3))
            p[:, axis] = face_val
            p[:, a] = rng.uniform(lo[a], hi[a], n)
            p[:, b] = rng.uniform(lo[b], hi[b], n)
            pts.append(p)
    return np.concatenate(pts, axis=0)


def _sample_sphere_surface(center, radius, density, rng):
    n = max(1, int(round(4 * np.pi * radius**2 * density)))
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(center) + radius * d


def fill_holes(pano: Panorama) -> Panorama:
    """Inpaint invalid pixels so the panorama is dense (validity all-true).

    Valid pixels keep their exact values; holes get inpainted colors. Used to
    turn sparse synthetic renders into camera-like dense query images.
    """
    if pano.valid.all():
        return pano
    img8 = np.clip(np.round(pano.pixels * 255.0), 0, 255).astype(np.uint8)
    mask = (~pano.valid).astype(np.uint8)
    filled = cv2.inpaint(img8, mask, 3, cv2.INPAINT_TELEA).astype(np.float64) / 255.0
    out = np.where(pano.valid[:, :, None], pano.pixels, filled)
    return Panorama(out)


def _in_box(points, lo, hi):
    return np.all((points >= np.asarray(lo)) & (points <= np.asarray(hi)), axis=1)


def apply_changes(cloud: PointCloud, changes) -> PointCloud:
    """Apply a change recipe to a cloud, returning the changed copy."""
    pos = cloud.positions.copy()
    col = cloud.colors.copy()
    for op in changes:
        if op.kind == "delete":
            keep = ~_in_box(pos, op.lo, op.hi)
            pos, col = pos[keep], col[keep]
        elif op.kind == "recolor":
            mask = _in_box(pos, op.lo, op.hi)
            col[mask] = np.clip(col[mask] + np.asarray(op.color_delta), 0.0, 1.0)
        elif op.kind == "color_shift":
            col = np.clip(col * np.asarray(op.scale) + np.asarray(op.offset), 0.0, 1.0)
        else:
            raise InvalidSpec(f"unknown change kind {op.kind!r}")
    if pos.shape[0] < 1:
        raise InvalidSpec("change recipe deleted every point")
    return PointCloud(pos, col)


def camera_render(cloud: "PointCloud", pose, image_height: int,
                  depth_tol: float = 0.03) -> Panorama:
    """Photograph-style panorama: per-pixel mean color of the points on the
    nearest surface seen through that pixel.

    Unlike the z-buffer splat renderer, which colors a pixel with a single
    winning point, this averages every point within `depth_tol` meters of the
    pixel's closest hit. The average integrates over the pixel footprint like
    a real sensor, which keeps the sampling-loss minimum at the true pose
    instead of biasing it toward nearer splats. Pixels no point lands in stay
    invalid.
    """
    H, W = image_height, 2 * image_height
    x, y, z = cloud.positions_t()
    R, t = pose.rotation, pose.translation
    cx = R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0]
    cy = R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1]
    cz = R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2]
    r = np.sqrt(cx * cx + cy * cy + cz * cz)
    ok = r >= 1e-12
    u = (np.arctan2(cy, cx) / (2.0 * np.pi) + 0.5) * W - 0.5
    v = (0.5 - np.arcsin(np.clip(cz / np.maximum(r, 1e-12), -1.0, 1.0))
         / np.pi) * H - 0.5
    col = np.mod(np.rint(u).astype(np.int64), W)
    row = np.clip(np.rint(v).astype(np.int64), 0, H - 1)
    landing = row * W + col
    nearest = np.full(H * W, np.inf)
    np.minimum.at(nearest, landing[ok], r[ok])
    keep = ok & (r <= nearest[landing] + depth_tol)
    count = np.bincount(landing[keep], minlength=H * W).astype(np.float64)
    img = np.zeros((H * W, 3))
    for c in range(3):
        img[:, c] = np.bincount(landing[keep], weights=cloud.colors[keep, c],
                                minlength=H * W)
    valid = count > 0
    img[valid] /= count[valid, None]
    return Panorama(img.reshape(H, W, 3), valid.reshape(H, W))


def generate_scene(spec: SceneSpec, seed: int):
    """Build a synthetic room scene.

    Returns (reference cloud, changed cloud, [(gt_pose, query_panorama), ...]).
    Queries are rendered from the CHANGED cloud; localization targets the
    reference cloud. Deterministic for fixed (spec, seed).
    """
    from .geometry import Pose, rot_z, sample_rotations

    rng = np.random.default_rng(seed)
    ex, ey, ez = spec.extents
    lo = np.zeros(3)
    hi = np.array([ex, ey, ez])

    # geometry recipe first (so the same surfaces can be sampled twice, at
    # map density and at query density): room box plus interior furniture
    # kept away from the room center so cameras have free space
    surfaces = [("box", lo, hi)]
    furn_regions = []
    for i in range(spec.n_furniture):
        cx = rng.uniform(0.15, 0.85) * ex
        cy = rng.uniform(0.15, 0.85) * ey
        if np.hypot(cx - ex / 2, cy - ey / 2) < 0.25 * min(ex, ey):
            cx = 0.15 * ex if cx < ex / 2 else 0.85 * ex
        if i % 2 == 0:
            half = rng.uniform(0.2, 0.5, 3)
            blo = np.array([cx - half[0], cy - half[1], 0.0])
            bhi = np.array([cx + half[0], cy + half[1], 2 * half[2]])
            surfaces.append(("box", blo, bhi))
            furn_regions.append((blo, bhi))
        else:
            r = rng.uniform(0.2, 0.45)
            center = np.array([cx, cy, r])
            surfaces.append(("sphere", center, r))
            furn_regions.append((center - r, center + r))

    def sample_cloud(density, sample_rng):
        pts = []
        for kind, a, b in surfaces:
            if kind == "box":
                pts.append(_sample_box_surface(a, b, density, sample_rng))
            else:
                pts.append(_sample_sphere_surface(a, b, density, sample_rng))
        positions = np.concatenate(pts, axis=0)
        colors = _smooth_color_field(positions, spec.texture_seed,
                                     spec.slow_wavelengths, spec.slow_amplitude,
                                     spec.dither_wavelength, spec.dither_amplitude)
        return PointCloud(positions, colors)

    reference = sample_cloud(spec.density, rng)
    changed = apply_changes(reference, spec.changes)
    # dense stand-in for the real world the query camera photographs
    dense = sample_cloud(spec.query_density, np.random.default_rng((seed, 1)))
    changed_dense = apply_changes(dense, spec.changes)

    # ground-truth camera poses: free interior positions, arbitrary yaw plus
    # mild pitch/roll (handheld-panorama style)
    queries = []
    H = spec.query_height
    attempts = 0
    while len(queries) < spec.n_queries and attempts < 1000 * spec.n_queries:
        attempts += 1
        c = np.array([rng.uniform(0.8, ex - 0.8),
                      rng.uniform(0.8, ey - 0.8),
                      rng.uniform(1.0, min(2.0, ez - 0.5))])
        d2 = np.min(np.sum((changed.positions - c) ** 2, axis=1))
        d2_ref = np.min(np.sum((reference.positions - c) ** 2, axis=1))
        if min(d2, d2_ref) < 0.2**2:
            continue
        yaw = rng.uniform(0, 2 * np.pi)
        tilt = sample_rotations(1, int(rng.integers(1 << 31)))[0]
        # shrink the random rotation toward identity to get a mild tilt
        from .geometry import exp_so3, log_so3
        tilt = exp_so3(0.06 * log_so3(tilt))
        R = tilt @ rot_z(yaw)
        pose = Pose.from_camera_center(R, c)
        queries.append((pose, fill_holes(camera_render(changed_dense, pose, H))))
    if len(queries) < spec.n_queries:
        raise InvalidSpec("could not place the requested number of queries")
    return reference, changed, queries
