"""Mean / variance feature images of a search region as binary PGM and PPM."""

from __future__ import annotations

import os

import numpy as np

from .scene import Box3D, PointCloudFrame
from .seeding import derive_seed
from .tracker import TrackerConfig, crop, local_image
from .vnn import VfgnParams, sample_set


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    # header is four whitespace-separated tokens, then exactly one whitespace byte
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens
    if magic not in (b"P5", b"P6") or int(maxval) != 255:
        raise ValueError(f"{path}: unsupported image")
    shape = (int(h), int(w)) if magic == b"P5" else (int(h), int(w), 3)
    return np.frombuffer(data[pos + 1:], dtype=np.uint8).reshape(shape)


def _to_byte(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def feature_maps(params: VfgnParams, frame: PointCloudFrame, box: Box3D, P: int,
                 cfg: TrackerConfig):
    """Search-region crop plus channel-max projections of mean and variance."""
    region = crop(local_image(frame, box.center, cfg), box, cfg.search_size, 0.0, cfg)
    out = sample_set(params, region, P, derive_seed(cfg.seed, "viz", frame.frame_index))
    mean_img = out.mean.data.max(axis=0)
    var_img = out.variance.data.max(axis=0)
    return region.data, mean_img, var_img


def emit_feature_maps(params: VfgnParams, frame: PointCloudFrame, box: Box3D, P: int,
                      out_dir, cfg: TrackerConfig | None = None) -> dict[str, str]:
    """Write ``mean.pgm``, ``variance.pgm``, ``composite.ppm`` and ``occupancy.pgm``.

    The composite puts certainty (one minus normalised variance) in red and
    normalised mean magnitude in blue.
    """
    cfg = cfg or TrackerConfig()
    region, mean_img, var_img = feature_maps(params, frame, box, P, cfg)
    lo, hi = mean_img.min(), mean_img.max()
    mean_n = (mean_img - lo) / (hi - lo) if hi > lo else np.zeros_like(mean_img)
    # same degeneracy floor as variance normalisation: rounding-level spread renders black
    vmax = var_img.max()
    var_n = var_img / vmax if vmax > 1e-30 else np.zeros_like(var_img)
    comp = np.zeros(mean_img.shape + (3,), dtype=np.uint8)
    comp[..., 0] = _to_byte(1.0 - var_n)
    comp[..., 2] = _to_byte(mean_n)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "mean": os.path.join(out_dir, "mean.pgm"),
        "variance": os.path.join(out_dir, "variance.pgm"),
        "composite": os.path.join(out_dir, "composite.ppm"),
        "occupancy": os.path.join(out_dir, "occupancy.pgm"),
    }
    write_pgm(paths["mean"], _to_byte(mean_n))
    write_pgm(paths["variance"], _to_byte(var_n))
    write_ppm(paths["composite"], comp)
    write_pgm(paths["occupancy"], np.where(region.sum(axis=0) > 0, 255, 0))
    return paths


def background_low_variance_fraction(variance: np.ndarray, occupancy: np.ndarray,
                                     by: str = "range") -> float:
    """Share of empty cells whose variance lies in the lowest quartile.

    ``by="range"`` uses the lowest quarter of the image's variance range,
    ``by="rank"`` the lowest 25% of cells by value (ties included).
    """
    variance = np.asarray(variance, dtype=np.float64)
    background = ~np.asarray(occupancy, dtype=bool)
    if not background.any():
        raise ValueError("region has no background cells")
    if by == "range":
        lo, hi = variance.min(), variance.max()
        cut = lo + 0.25 * (hi - lo)
    elif by == "rank":
        cut = np.quantile(variance, 0.25)
    else:
        raise ValueError(f"unknown quartile reading {by!r}; use 'range' or 'rank'")
    return float(np.mean(variance[background] <= cut))
