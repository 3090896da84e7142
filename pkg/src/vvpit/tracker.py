"""Siamese single-object tracking loop with multi-rotation search.

The target template is cropped once at initialisation and its sampled
feature statistics are frozen for the whole track. Every later frame is
searched around the previous box at a few yaw offsets; the best window-
blended peak decides both the translation and the yaw update.

Crops are taken at the voxel resolution, so one score-map cell is one
voxel cell in world units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .scene import Box3D, PointCloudFrame, PseudoImage, resample, voxelize
from .seeding import derive_seed
from .tensor import Tensor
from .vnn import VariationalOutputSet, VfgnParams, sample_set
from .xcorr import XcorrConfig, correlate, normalize_variance, peak_to_offset


class EmptyRegionError(ValueError):
    """The cropped region contains no points."""


@dataclass
class TrackerConfig:
    P: int = 8
    xcorr: XcorrConfig = field(default_factory=XcorrConfig)
    rotation_step: float = 0.1
    rotation_candidates: int = 3
    rotation_score_penalty: float = 0.98
    target_size: int = 16
    search_size: int = 26
    cell_size: float = 0.3
    window_weight: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("P must be >= 1")
        if self.rotation_candidates < 1 or self.rotation_candidates % 2 == 0:
            raise ValueError("rotation_candidates must be odd")
        if not 0 < self.rotation_score_penalty <= 1:
            raise ValueError("rotation_score_penalty must be in (0, 1]")
        if self.target_size < 1 or self.search_size < self.target_size:
            raise ValueError("need 1 <= target_size <= search_size")
        if (self.search_size - self.target_size) % 2:
            raise ValueError("search_size - target_size must be even so the map has a centre cell")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if not 0 <= self.window_weight < 1:
            raise ValueError("window_weight must be in [0, 1)")

    def rotations(self) -> list[float]:
        """Candidate yaw offsets, zero first, then by increasing magnitude (negative first)."""
        k = self.rotation_candidates // 2
        out = [0.0]
        for i in range(1, k + 1):
            out += [-i * self.rotation_step, i * self.rotation_step]
        return out

    def context_scale(self, box: Box3D, size: int) -> float:
        """Region side over ``max(l, w)`` implied by voxel-resolution crops."""
        return size * self.cell_size / max(box.size[0], box.size[1])


@dataclass
class TrackerState:
    current_box: Box3D
    target_set: VariationalOutputSet
    config: TrackerConfig
    params: VfgnParams
    frame_index: int = 0
    target_vn: Tensor | None = None
    last_score: float = 1.0
    lost: bool = False


def local_image(frame: PointCloudFrame, center_xy, cfg: TrackerConfig) -> PseudoImage:
    """Voxelize a grid-aligned window large enough for any rotated search crop."""
    cell = cfg.cell_size
    half = cfg.search_size * cell * 0.75 + 2 * cell
    x0 = math.floor((center_xy[0] - half) / cell) * cell
    y0 = math.floor((center_xy[1] - half) / cell) * cell
    n = int(math.ceil(2 * half / cell)) + 1
    return voxelize(frame, cell, (x0, x0 + n * cell, y0, y0 + n * cell))


def crop(img: PseudoImage, box: Box3D, size: int, rotation: float, cfg: TrackerConfig) -> Tensor:
    return Tensor(resample(img, box.center[:2], box.yaw + rotation, size, cfg.cell_size))


def fused_logits(params: VfgnParams, cfg: XcorrConfig, search: VariationalOutputSet,
                 target: VariationalOutputSet, target_vn: Tensor | None = None) -> Tensor:
    """Correlation in the configured mode followed by the learned affine adjustment.

    The raw map is divided by the template element count first, which keeps
    the adjustment parameters on a similar scale for any region size.
    """
    score = correlate(cfg, search.mean, target.mean, search.variance, target.variance, target_vn)
    per_element = score.values * (1.0 / target.mean.size)
    return per_element * params.adjust_scale + params.adjust_bias


def init(frame: PointCloudFrame, init_box: Box3D, params: VfgnParams,
         cfg: TrackerConfig) -> TrackerState:
    img = local_image(frame, init_box.center, cfg)
    region = crop(img, init_box, cfg.target_size, 0.0, cfg)
    if not np.any(region.data):
        raise EmptyRegionError(f"no points around the initial box in frame {frame.frame_index}")
    target_set = sample_set(params, region, cfg.P, derive_seed(cfg.seed, "target"))
    target_vn = None
    if cfg.xcorr.mode == "penalization":
        target_vn = normalize_variance(target_set.variance, cfg.xcorr.rho)
    return TrackerState(init_box, target_set, cfg, params, frame.frame_index, target_vn)


def _normalized(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def evaluate_candidates(state: TrackerState, frame: PointCloudFrame):
    """Score every rotation candidate; returns a list of (rotation, d_row, d_col, score)."""
    cfg = state.config
    box = state.current_box
    img = local_image(frame, box.center, cfg)
    seed = derive_seed(cfg.seed, "search", frame.frame_index)
    out = []
    for rot in cfg.rotations():
        region = crop(img, box, cfg.search_size, rot, cfg)
        if rot == 0.0 and not np.any(region.data):
            return None
        search_set = sample_set(state.params, region, cfg.P, seed)
        logits = fused_logits(state.params, cfg.xcorr, search_set, state.target_set,
                              state.target_vn).data[0]
        d_row, d_col, _ = peak_to_offset(_normalized(logits), cfg.window_weight)
        h, w = logits.shape
        peak = logits[int(round(d_row + (h - 1) / 2)), int(round(d_col + (w - 1) / 2))]
        score = float(T._sigmoid(np.asarray(peak)))
        if rot != 0.0:
            score *= cfg.rotation_score_penalty
        out.append((rot, d_row, d_col, score))
    return out


def step(state: TrackerState, frame: PointCloudFrame) -> tuple[TrackerState, Box3D]:
    cfg = state.config
    box = state.current_box
    cands = evaluate_candidates(state, frame)
    if cands is None:
        new = TrackerState(box, state.target_set, cfg, state.params, frame.frame_index,
                           state.target_vn, 0.0, lost=True)
        return new, box
    best = cands[0]
    for cand in cands[1:]:
        if cand[3] > best[3]:
            best = cand
    rot, d_row, d_col, score = best
    theta = box.yaw + rot
    c, s = math.cos(theta), math.sin(theta)
    step_m = cfg.cell_size
    dx = (c * d_row - s * d_col) * step_m
    dy = (s * d_row + c * d_col) * step_m
    new_box = Box3D((box.center[0] + dx, box.center[1] + dy, box.center[2]), box.size, theta)
    new = TrackerState(new_box, state.target_set, cfg, state.params, frame.frame_index,
                       state.target_vn, score, lost=False)
    return new, new_box


def track_sequence(params: VfgnParams, frames: list[PointCloudFrame], cfg: TrackerConfig,
                   init_box: Box3D | None = None) -> list[tuple[Box3D, float]]:
    """Track from the first frame's box; returns one (box, score) per frame."""
    if not frames:
        raise ValueError("empty sequence")
    box0 = frames[0].gt_box if init_box is None else init_box
    state = init(frames[0], box0, params, cfg)
    out = [(box0, 1.0)]
    for fr in frames[1:]:
        state, box = step(state, fr)
        out.append((box, state.last_score))
    return out


TRACK_HEADER = "frame,cx,cy,cz,l,w,h,yaw,score,mode"


def format_track(frames: list[PointCloudFrame], track: list[tuple[Box3D, float]], mode: str) -> str:
    lines = [TRACK_HEADER]
    for fr, (box, score) in zip(frames, track):
        vals = (*box.center, *box.size, box.yaw, score)
        lines.append(f"{fr.frame_index}," + ",".join(repr(float(v)) for v in vals) + f",{mode}")
    return "\n".join(lines) + "\n"
