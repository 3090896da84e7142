"""Synthetic Lidar sequences, pillar voxelization and region cropping.

Stands in for real driving logs plus a learned pillar encoder: a single
box-shaped object drives along a smooth trajectory among static clutter
boxes and sparse ground returns. Frames are voxelized into a 3-channel
bird's-eye-view pseudo image (point count, mean height, max height).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .seeding import rng_for
from .tensor import Tensor

SATURATION = 16.0
HEIGHT_CAP = 3.0


def wrap_angle(angle: float) -> float:
    """Map an angle to (-pi, pi]."""
    return math.pi - (math.pi - float(angle)) % (2.0 * math.pi)


@dataclass(frozen=True)
class Box3D:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size need three components")
        if not all(s > 0 for s in size) or not all(math.isfinite(v) for v in center + size):
            raise ValueError(f"degenerate box size {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        l, w, h = self.size
        return l * w * h

    def replace(self, center=None, yaw=None) -> "Box3D":
        return Box3D(
            self.center if center is None else center,
            self.size,
            self.yaw if yaw is None else yaw,
        )

    def bev_corners(self) -> np.ndarray:
        """Counter-clockwise BEV corners, shape (4, 2)."""
        l, w, _ = self.size
        local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]]) * 0.5
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.array(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * pts[:, 0] + s * pts[:, 1]
        y = -s * pts[:, 0] + c * pts[:, 1]
        return np.stack([x, y, pts[:, 2]], axis=1)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        local = np.abs(self.to_local(points))
        half = np.array(self.size) * 0.5 + tol
        return np.all(local <= half, axis=1)


@dataclass
class PointCloudFrame:
    points: np.ndarray
    gt_box: Box3D
    frame_index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")


@dataclass
class PseudoImage:
    channels: Tensor
    cell_size: float
    origin: tuple[float, float]


@dataclass
class SceneConfig:
    frame_count: int = 60
    init_x: float = 0.0
    init_y: float = 0.0
    init_yaw_range: tuple[float, float] = (-math.pi, math.pi)
    speed_range: tuple[float, float] = (0.0, 0.6)
    yaw_rate_range: tuple[float, float] = (-0.03, 0.03)
    length_range: tuple[float, float] = (3.6, 4.6)
    width_range: tuple[float, float] = (1.6, 1.9)
    height_range: tuple[float, float] = (1.4, 1.7)
    object_density: float = 20.0
    ground_density: float = 0.5
    clutter_count: int = 6
    noise_sigma: float = 0.02
    dropout: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if min(self.object_density, self.ground_density) < 0:
            raise ValueError("densities must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.noise_sigma < 0 or self.clutter_count < 0:
            raise ValueError("noise_sigma and clutter_count must be >= 0")
        for name in ("init_yaw_range", "speed_range", "yaw_rate_range",
                     "length_range", "width_range", "height_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} has lo > hi")
        if self.length_range[0] <= 0 or self.width_range[0] <= 0 or self.height_range[0] <= 0:
            raise ValueError("object sizes must be positive")


def _uniform(rng: np.random.Generator, bounds) -> float:
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def trajectory(cfg: SceneConfig) -> list[Box3D]:
    """Ground-truth boxes: constant speed along the heading, constant yaw rate."""
    rng = rng_for(cfg.seed, "trajectory")
    size = (_uniform(rng, cfg.length_range), _uniform(rng, cfg.width_range),
            _uniform(rng, cfg.height_range))
    yaw = _uniform(rng, cfg.init_yaw_range)
    speed = _uniform(rng, cfg.speed_range)
    yaw_rate = _uniform(rng, cfg.yaw_rate_range)
    x, y = float(cfg.init_x), float(cfg.init_y)
    boxes = []
    for _ in range(cfg.frame_count):
        boxes.append(Box3D((x, y, size[2] / 2), size, yaw))
        x += speed * math.cos(yaw)
        y += speed * math.sin(yaw)
        yaw += yaw_rate
    return boxes


def surface_area(size) -> float:
    l, w, h = size
    return 2.0 * (l * w + l * h + w * h)


def sample_box_surface(box: Box3D, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the six faces of ``box``."""
    if count == 0:
        return np.zeros((0, 3))
    l, w, h = box.size
    areas = np.array([l * w, l * w, w * h, w * h, l * h, l * h])
    face = rng.choice(6, size=count, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(count, 2))
    local = np.empty((count, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    # fixed axis per face pair: 0 -> z (top/bottom), 1 -> x (front/back), 2 -> y (sides)
    free = {0: (0, 1), 1: (1, 2), 2: (0, 2)}
    fixed = {0: 2, 1: 0, 2: 1}
    dims = np.array([l, w, h])
    for a in range(3):
        m = axis == a
        f0, f1 = free[a]
        local[m, fixed[a]] = sign[m] * dims[fixed[a]]
        local[m, f0] = u[m, 0] * dims[f0]
        local[m, f1] = u[m, 1] * dims[f1]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = np.empty_like(local)
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.center[0]
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.center[1]
    world[:, 2] = local[:, 2] + box.center[2]
    return world


def _place_clutter(cfg: SceneConfig, path: list[Box3D]) -> list[Box3D]:
    rng = rng_for(cfg.seed, "clutter")
    centers = np.array([b.center[:2] for b in path])
    out = []
    for _ in range(cfg.clutter_count):
        for _attempt in range(50):
            anchor = path[int(rng.integers(len(path)))]
            side = 1.0 if rng.random() < 0.5 else -1.0
            lateral = side * rng.uniform(3.5, 8.0)
            along = rng.uniform(-6.0, 6.0)
            c, s = math.cos(anchor.yaw), math.sin(anchor.yaw)
            x = anchor.center[0] + c * along - s * lateral
            y = anchor.center[1] + s * along + c * lateral
            if np.min(np.hypot(centers[:, 0] - x, centers[:, 1] - y)) >= 3.5:
                size = (_uniform(rng, cfg.length_range), _uniform(rng, cfg.width_range),
                        _uniform(rng, cfg.height_range))
                yaw = anchor.yaw + rng.uniform(-0.2, 0.2)
                out.append(Box3D((x, y, size[2] / 2), size, yaw))
                break
    return out


def generate_frame(cfg: SceneConfig, index: int, path: list[Box3D], clutter: list[Box3D]) -> PointCloudFrame:
    rng = rng_for(cfg.seed, "frame", index)
    box = path[index]
    parts = [sample_box_surface(box, int(rng.poisson(cfg.object_density * surface_area(box.size))), rng)]
    for cb in clutter:
        n = int(rng.poisson(cfg.object_density * surface_area(cb.size)))
        parts.append(sample_box_surface(cb, n, rng))
    if cfg.ground_density > 0:
        xy = np.array([b.center[:2] for b in path])
        lo = xy.min(axis=0) - 12.0
        hi = xy.max(axis=0) + 12.0
        n = int(rng.poisson(cfg.ground_density * float(np.prod(hi - lo))))
        ground = np.zeros((n, 3))
        ground[:, :2] = rng.uniform(lo, hi, size=(n, 2))
        parts.append(ground)
    pts = np.concatenate(parts, axis=0)
    if cfg.noise_sigma > 0:
        pts = pts + rng.normal(0.0, cfg.noise_sigma, size=pts.shape)
    if cfg.dropout > 0:
        pts = pts[rng.random(len(pts)) >= cfg.dropout]
    if not np.any(box.contains(pts)):
        pts = np.concatenate([pts, np.array([box.center])], axis=0)
    return PointCloudFrame(pts, box, index)


def generate_sequence(cfg: SceneConfig) -> list[PointCloudFrame]:
    """Deterministic synthetic sequence; frame ``k`` depends only on (seed, k)."""
    cfg.validate()
    path = trajectory(cfg)
    clutter = _place_clutter(cfg, path)
    return [generate_frame(cfg, k, path, clutter) for k in range(cfg.frame_count)]


# ---------------------------------------------------------------- voxelize


def grid_shape(cell_size: float, extent) -> tuple[int, int]:
    x_min, x_max, y_min, y_max = extent
    return (int(round((x_max - x_min) / cell_size)), int(round((y_max - y_min) / cell_size)))


def voxelize(frame: PointCloudFrame, cell_size: float, extent) -> PseudoImage:
    """BEV pillar features: clipped count, mean height and max height per cell."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    x_min, x_max, y_min, y_max = (float(v) for v in extent)
    h, w = grid_shape(cell_size, extent)
    if h < 2 or w < 2:
        raise ValueError(f"extent {extent} spans fewer than 2 cells at cell size {cell_size}")
    pts = frame.points
    ix = np.floor((pts[:, 0] - x_min) / cell_size).astype(np.int64)
    iy = np.floor((pts[:, 1] - y_min) / cell_size).astype(np.int64)
    keep = (ix >= 0) & (ix < h) & (iy >= 0) & (iy < w)
    ix, iy = ix[keep], iy[keep]
    z = np.clip(pts[keep, 2], 0.0, HEIGHT_CAP)
    # canonical order so sums do not depend on point order
    order = np.lexsort((z, iy, ix))
    flat = (ix * w + iy)[order]
    z = z[order]
    count = np.bincount(flat, minlength=h * w).astype(np.float64)
    zsum = np.bincount(flat, weights=z, minlength=h * w)
    zmax = np.zeros(h * w)
    np.maximum.at(zmax, flat, z)
    occupied = count > 0
    mean = np.zeros(h * w)
    mean[occupied] = zsum[occupied] / count[occupied]
    chans = np.stack([
        np.minimum(count, SATURATION) / SATURATION,
        mean / HEIGHT_CAP,
        zmax / HEIGHT_CAP,
    ]).reshape(3, h, w)
    return PseudoImage(Tensor(chans), float(cell_size), (x_min, y_min))


def resample(img: PseudoImage, center_xy, theta: float, out_size: int, pixel: float) -> np.ndarray:
    """Bilinear samples on an ``out_size`` square grid of spacing ``pixel``.

    Output axis 1 runs along heading ``theta``, axis 2 to its left. Samples
    outside the image read as zero.
    """
    offs = (np.arange(out_size) + 0.5 - out_size / 2.0) * pixel
    c, s = math.cos(theta), math.sin(theta)
    ua, vb = np.meshgrid(offs, offs, indexing="ij")
    wx = center_xy[0] + c * ua - s * vb
    wy = center_xy[1] + s * ua + c * vb
    data = img.channels.data
    _, h, w = data.shape
    fx = (wx - img.origin[0]) / img.cell_size - 0.5
    fy = (wy - img.origin[1]) / img.cell_size - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = fx - x0
    ay = fy - y0
    out = np.zeros((data.shape[0], out_size, out_size))
    for dx, wxk in ((0, 1.0 - ax), (1, ax)):
        for dy, wyk in ((0, 1.0 - ay), (1, ay)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < h) & (yi >= 0) & (yi < w)
            wgt = np.where(valid, wxk * wyk, 0.0)
            out += data[:, np.clip(xi, 0, h - 1), np.clip(yi, 0, w - 1)] * wgt
    return out


def crop_region(img: PseudoImage, box: Box3D, context_scale: float, rotation: float,
                out_size: int) -> Tensor:
    """Square region of side ``context_scale * max(l, w)`` around ``box``.

    The region is aligned with ``box.yaw + rotation`` and resampled to
    ``out_size`` × ``out_size`` cells.
    """
    if context_scale < 1:
        raise ValueError("context_scale must be >= 1")
    if out_size < 1:
        raise ValueError("out_size must be >= 1")
    side = context_scale * max(box.size[0], box.size[1])
    pixel = side / out_size
    return Tensor(resample(img, box.center[:2], box.yaw + rotation, out_size, pixel))


# ------------------------------------------------------------- persistence

GT_HEADER = "frame,cx,cy,cz,l,w,h,yaw"


def write_sequence(path, frames: list[PointCloudFrame]) -> None:
    os.makedirs(path, exist_ok=True)
    lines = [GT_HEADER]
    for fr in frames:
        with open(os.path.join(path, f"frame_{fr.frame_index:05d}.xyz"), "w", encoding="utf-8",
                  newline="\n") as fh:
            for x, y, z in fr.points.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n")
        b = fr.gt_box
        vals = (*b.center, *b.size, b.yaw)
        lines.append(f"{fr.frame_index}," + ",".join(repr(float(v)) for v in vals))
    with open(os.path.join(path, "gt.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sequence(path) -> list[PointCloudFrame]:
    gt_path = os.path.join(path, "gt.csv")
    with open(gt_path, encoding="utf-8") as fh:
        rows = fh.read().strip().splitlines()
    if not rows or rows[0].strip() != GT_HEADER:
        raise ValueError(f"{gt_path}: bad header")
    frames = []
    for row in rows[1:]:
        parts = row.split(",")
        if len(parts) != 8:
            raise ValueError(f"{gt_path}: malformed row {row!r}")
        idx = int(parts[0])
        cx, cy, cz, l, w, h, yaw = (float(p) for p in parts[1:])
        box = Box3D((cx, cy, cz), (l, w, h), yaw)
        with open(os.path.join(path, f"frame_{idx:05d}.xyz"), encoding="utf-8") as fh:
            pts = [tuple(float(v) for v in line.split()) for line in fh if line.strip()]
        frames.append(PointCloudFrame(np.array(pts, dtype=np.float64).reshape(-1, 3), box, idx))
    return frames
