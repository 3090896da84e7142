"""Score-map training of the variational feature network.

A training pair is a target crop at the ground-truth box of one frame and a
search crop from a later frame, centred on the earlier box. Both crops go
through ``P_train`` network draws; the fused score map of the aggregated
statistics is fitted to a binary disc label with class-balanced BCE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .scene import PointCloudFrame
from .seeding import derive_seed, rng_for
from .tensor import GradTape, Tensor
from .tracker import TrackerConfig, crop, fused_logits, local_image
from .vnn import VfgnParams, sample_set


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 0.01
    momentum: float = 0.9
    P_train: int = 8
    gap_min: int = 1
    gap_max: int = 4
    label_radius: float = 2.0
    pos_weight: float | None = None
    neg_weight: float | None = None
    seed: int = 0
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.P_train < 1:
            raise ValueError("P_train must be >= 1")
        if self.label_radius < 0:
            raise ValueError("label_radius must be >= 0")
        if not 1 <= self.gap_min <= self.gap_max:
            raise ValueError("need 1 <= gap_min <= gap_max")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr >= 0 and momentum in [0, 1)")
        for w in (self.pos_weight, self.neg_weight):
            if w is not None and w <= 0:
                raise ValueError("class weights must be positive")


def make_label(map_shape, gt_displacement, radius: float) -> Tensor:
    """Binary disc of ``radius`` cells around the displaced map centre."""
    h, w = map_shape
    pr = int(round((h - 1) / 2.0 + gt_displacement[0]))
    pc = int(round((w - 1) / 2.0 + gt_displacement[1]))
    if not (0 <= pr < h and 0 <= pc < w):
        raise ValueError(f"displacement {gt_displacement} falls outside a {h}x{w} map")
    rows = np.arange(h)[:, None] - pr
    cols = np.arange(w)[None, :] - pc
    return Tensor((rows * rows + cols * cols <= radius * radius).astype(np.float64)[None])


def balanced_weights(label: np.ndarray) -> tuple[float, float]:
    n = label.size
    pos = float(label.sum())
    neg = n - pos
    if pos == 0 or neg == 0:
        return 1.0, 1.0
    return n / (2.0 * pos), n / (2.0 * neg)


def bce_loss(logits, label: Tensor, pos_weight: float = 1.0, neg_weight: float = 1.0) -> Tensor:
    """Mean weighted binary cross-entropy on logits, in softplus form."""
    x = getattr(logits, "values", logits)
    if x.shape != label.shape:
        raise T.ShapeError(f"logits {x.shape} and label {label.shape} differ")
    if pos_weight <= 0 or neg_weight <= 0:
        raise ValueError("class weights must be positive")
    y = label.data
    term = T.softplus(-x) * Tensor(pos_weight * y) + T.softplus(x) * Tensor(neg_weight * (1.0 - y))
    return T.reduce("mean", term)


@dataclass
class TrainingPair:
    target: Tensor
    search: Tensor
    displacement: tuple[float, float]


def pair_from_frames(first: PointCloudFrame, second: PointCloudFrame, geom: TrackerConfig) -> TrainingPair:
    box = first.gt_box
    target = crop(local_image(first, box.center, geom), box, geom.target_size, 0.0, geom)
    search = crop(local_image(second, box.center, geom), box, geom.search_size, 0.0, geom)
    dx = second.gt_box.center[0] - box.center[0]
    dy = second.gt_box.center[1] - box.center[1]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    disp = ((c * dx + s * dy) / geom.cell_size, (-s * dx + c * dy) / geom.cell_size)
    return TrainingPair(target, search, disp)


def draw_pair(dataset: list[list[PointCloudFrame]], cfg: TrainConfig, geom: TrackerConfig,
              step: int, attempts: int = 200) -> TrainingPair:
    """Random valid pair for ``step``; randomness depends only on (seed, step)."""
    rng = rng_for(cfg.seed, "pair", step)
    half = (geom.search_size - geom.target_size) // 2
    for _ in range(attempts):
        seq = dataset[int(rng.integers(len(dataset)))]
        if len(seq) < 2:
            continue
        gap = int(rng.integers(cfg.gap_min, cfg.gap_max + 1))
        gap = min(gap, len(seq) - 1)
        t1 = int(rng.integers(0, len(seq) - gap))
        pair = pair_from_frames(seq[t1], seq[t1 + gap], geom)
        if max(abs(round(pair.displacement[0])), abs(round(pair.displacement[1]))) > half:
            continue
        if not np.any(pair.target.data) or not np.any(pair.search.data):
            continue
        return pair
    raise ValueError("could not draw a valid training pair")


def pair_loss(params: VfgnParams, pair: TrainingPair, cfg: TrainConfig, geom: TrackerConfig,
              noise_seed: int) -> Tensor:
    tset = sample_set(params, pair.target, cfg.P_train, derive_seed(noise_seed, "target"))
    sset = sample_set(params, pair.search, cfg.P_train, derive_seed(noise_seed, "search"))
    logits = fused_logits(params, geom.xcorr, sset, tset)
    label = make_label(logits.shape[1:], pair.displacement, cfg.label_radius)
    wp, wn = balanced_weights(label.data)
    if cfg.pos_weight is not None:
        wp = cfg.pos_weight
    if cfg.neg_weight is not None:
        wn = cfg.neg_weight
    return bce_loss(logits, label, wp, wn)


def train(
    dataset: list[list[PointCloudFrame]],
    cfg: TrainConfig,
    init: VfgnParams,
    geom: TrackerConfig | None = None,
    on_checkpoint: Callable[[Checkpoint], None] | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> Checkpoint:
    """SGD with momentum on the fused score-map loss; deterministic given ``cfg.seed``."""
    if not dataset:
        raise ValueError("empty dataset")
    geom = geom or TrackerConfig()
    params = init.copy()
    tensors = params.parameters()
    velocity = [np.zeros_like(t.data) for t in tensors]
    history: list[float] = []
    running = 0.0
    for step in range(cfg.steps):
        pair = draw_pair(dataset, cfg, geom, step)
        with GradTape() as tape:
            loss = pair_loss(params, pair, cfg, geom, derive_seed(cfg.seed, "noise", step))
        value = loss.item()
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {step}")
        grads = T.backward(tape, loss)
        for i, t in enumerate(tensors):
            g = grads[t.uid].data if t.uid in grads else 0.0
            velocity[i] = cfg.momentum * velocity[i] + g
            t.data = t.data - cfg.lr * velocity[i]
        history.append(value)
        running = value if step == 0 else 0.98 * running + 0.02 * value
        if on_step is not None:
            on_step(step, value)
        if on_checkpoint and cfg.checkpoint_interval and (step + 1) % cfg.checkpoint_interval == 0:
            on_checkpoint(Checkpoint.from_params(params, step + 1, running, cfg))
    ckpt = Checkpoint.from_params(params, cfg.steps, running, cfg)
    ckpt.history = history
    return ckpt
