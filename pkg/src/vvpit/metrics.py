"""One-pass Success/Precision evaluation and 3D IoU."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .scene import Box3D, PointCloudFrame

# k/20 and k/10 are the correctly rounded decimal thresholds; linspace is off by an ulp at some
SUCCESS_THRESHOLDS = np.arange(21) / 20.0
PRECISION_THRESHOLDS = np.arange(21) / 10.0


def _clip(subject: list, a: np.ndarray, b: np.ndarray) -> list:
    """Keep the part of ``subject`` left of the directed edge a->b."""
    out = []
    if not subject:
        return out

    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    prev = subject[-1]
    prev_in = side(prev) >= 0
    for cur in subject:
        cur_in = side(cur) >= 0
        if cur_in != prev_in:
            sp, sc = side(prev), side(cur)
            t = sp / (sp - sc)
            out.append(prev + t * (cur - prev))
        if cur_in:
            out.append(cur)
        prev, prev_in = cur, cur_in
    return out


def polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    pts = np.asarray(poly)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def bev_intersection(a: Box3D, b: Box3D) -> float:
    """Overlap area of the two yawed footprints (Sutherland-Hodgman)."""
    poly = list(a.bev_corners())
    clip = b.bev_corners()
    for i in range(4):
        poly = _clip(poly, clip[i], clip[(i + 1) % 4])
        if not poly:
            return 0.0
    return polygon_area(poly)


def iou3d(a: Box3D, b: Box3D) -> float:
    za0, za1 = a.center[2] - a.size[2] / 2, a.center[2] + a.size[2] / 2
    zb0, zb1 = b.center[2] - b.size[2] / 2, b.center[2] + b.size[2] / 2
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0:
        return 0.0
    inter = bev_intersection(a, b) * dz
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def center_distance(a: Box3D, b: Box3D) -> float:
    return math.dist(a.center, b.center)


@dataclass
class TrackResult:
    predicted: list[Box3D]
    ground_truth: list[Box3D]
    frame_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.predicted) != len(self.ground_truth):
            raise ValueError("predicted and ground-truth tracks differ in length")
        if not self.frame_indices:
            self.frame_indices = list(range(len(self.predicted)))
        if len(self.frame_indices) != len(self.predicted):
            raise ValueError("frame index count does not match the track length")
        if any(b <= a for a, b in zip(self.frame_indices, self.frame_indices[1:])):
            raise ValueError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.predicted)

    def ious(self) -> np.ndarray:
        return np.array([iou3d(p, g) for p, g in zip(self.predicted, self.ground_truth)])

    def center_errors(self) -> np.ndarray:
        return np.array([center_distance(p, g) for p, g in zip(self.predicted, self.ground_truth)])


def success_from_ious(ious) -> float:
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("no frames to evaluate")
    curve = [(ious > t).mean() for t in SUCCESS_THRESHOLDS]
    return 100.0 * float(np.mean(curve))


def precision_from_errors(errors) -> float:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("no frames to evaluate")
    curve = [(errors < d).mean() for d in PRECISION_THRESHOLDS]
    return 100.0 * float(np.mean(curve))


def success_auc(results: TrackResult) -> float:
    return success_from_ious(results.ious())


def precision_auc(results: TrackResult) -> float:
    return precision_from_errors(results.center_errors())


@dataclass
class EvalReport:
    success: float
    precision: float
    frames: int
    per_sequence: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)


def report_from_results(results: list[TrackResult], config: dict | None = None) -> EvalReport:
    """Frame-weighted aggregate over all sequences."""
    if not results:
        raise ValueError("no sequences to evaluate")
    ious = np.concatenate([r.ious() for r in results])
    errs = np.concatenate([r.center_errors() for r in results])
    per = [
        {"success": success_auc(r), "precision": precision_auc(r), "frames": len(r)}
        for r in results
    ]
    return EvalReport(success_from_ious(ious), precision_from_errors(errs), int(ious.size),
                      per, dict(config or {}))


def _result_for(frames: list[PointCloudFrame], boxes: list[Box3D]) -> TrackResult:
    # the initial frame is given to the tracker and is not scored
    return TrackResult(boxes[1:], [f.gt_box for f in frames[1:]],
                       [f.frame_index for f in frames[1:]])


def _track_one(args):
    from .tracker import track_sequence

    params, cfg, frames = args
    return [b for b, _ in track_sequence(params, frames, cfg)]


def evaluate(params, cfg, sequences: list[list[PointCloudFrame]], threads: int = 1) -> EvalReport:
    """Track every sequence from its first ground-truth box and score the result."""
    sequences = [s for s in sequences]
    if not sequences:
        raise ValueError("no sequences to evaluate")
    for s in sequences:
        if len(s) < 2:
            raise ValueError("each sequence needs at least two frames")
    jobs = [(params, cfg, frames) for frames in sequences]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            tracks = list(pool.map(_track_one, jobs))
    else:
        tracks = [_track_one(j) for j in jobs]
    results = [_result_for(frames, boxes) for frames, boxes in zip(sequences, tracks)]
    echo = {
        "mode": cfg.xcorr.mode, "P": cfg.P, "lambda": cfg.xcorr.lam,
        "rho": cfg.xcorr.rho, "seed": cfg.seed,
    }
    return report_from_results(results, echo)


def evaluate_static(sequences: list[list[PointCloudFrame]]) -> EvalReport:
    """Baseline that keeps the initial box for the whole sequence."""
    results = [_result_for(s, [s[0].gt_box] * len(s)) for s in sequences]
    return report_from_results(results, {"mode": "static"})


REPORT_HEADER = "mode,P,lambda,rho,success,precision,frames,seed"


def format_report_row(mode: str, report: EvalReport, P: int, lam: float, rho: float, seed: int) -> str:
    return (f"{mode},{P},{lam!r},{rho!r},{report.success:.6f},{report.precision:.6f},"
            f"{report.frames},{seed}")
