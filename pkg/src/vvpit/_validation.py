"""Input checks shared by the estimator facade."""

from __future__ import annotations

import numbers

import numpy as np

from .scene import Box3D, PointCloudFrame


def check_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain NaN or infinity")
    return arr


def check_frame(frame) -> PointCloudFrame:
    if not isinstance(frame, PointCloudFrame):
        raise TypeError(f"expected PointCloudFrame, got {type(frame).__name__}")
    check_points(frame.points)
    return frame


def check_sequence(seq, min_frames: int = 2) -> list[PointCloudFrame]:
    frames = [check_frame(f) for f in seq]
    if len(frames) < min_frames:
        raise ValueError(f"a sequence needs at least {min_frames} frames, got {len(frames)}")
    idx = [f.frame_index for f in frames]
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValueError("frame indices must be strictly increasing")
    return frames


def check_sequences(X, min_frames: int = 2) -> list[list[PointCloudFrame]]:
    """Accept one sequence or a list of sequences; always return a list of sequences."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError("X must be a list of frame sequences")
    items = list(X)
    if not items:
        raise ValueError("X is empty")
    if isinstance(items[0], PointCloudFrame):
        items = [items]
    return [check_sequence(s, min_frames) for s in items]


def check_box_array(boxes) -> np.ndarray:
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 7:
        raise ValueError(f"boxes must have shape (N, 7), got {arr.shape}")
    return arr


def boxes_to_array(boxes: list[Box3D]) -> np.ndarray:
    return np.array([[*b.center, *b.size, b.yaw] for b in boxes], dtype=np.float64).reshape(-1, 7)


def check_scalar(value, name: str, kind=numbers.Real, low=None, high=None,
                 low_open: bool = False):
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {kind.__name__}, got {value!r}")
    if low is not None and (value < low or (low_open and value == low)):
        raise ValueError(f"{name} = {value!r} is below its lower bound {low}")
    if high is not None and value > high:
        raise ValueError(f"{name} = {value!r} exceeds {high}")
    return value
