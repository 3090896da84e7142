"""Uncertainty-aware cross-correlation of search and target features.

Three fusion modes turn the aggregated feature statistics into a score map:

``averaging``
    plain correlation of the mean features, variances ignored.
``double_similarity``
    correlation of the means plus ``lam`` times the correlation of the
    variances, so positions with matching uncertainty score higher.
``penalization``
    each mean product inside the sliding window is divided by the average
    of the two channel-normalised variances (values in ``[1, rho]``), which
    damps contributions from uncertain features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import Tensor, _emit

MODES = ("averaging", "double_similarity", "penalization")
MODE_ALIASES = {"double": "double_similarity", "avg": "averaging", "pen": "penalization"}
DEGENERATE_RANGE = 1e-30


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(
            f"unknown correlation mode {mode!r}; valid modes: averaging, double, penalization"
        )
    return mode


@dataclass
class XcorrConfig:
    mode: str = "penalization"
    lam: float = 10.0
    rho: float = 1.25

    def __post_init__(self):
        self.mode = canonical_mode(self.mode)
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")


@dataclass
class ScoreMap:
    values: Tensor
    stride: int = 1

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] != 1 or min(self.values.shape) < 1:
            raise T.ShapeError(f"score map must be 1×H×W, got {self.values.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


def _check_pair(search: Tensor, target: Tensor) -> None:
    if search.ndim != 3 or target.ndim != 3:
        raise T.ShapeError(f"expected C×H×W features, got {search.shape} and {target.shape}")
    if search.shape[0] != target.shape[0]:
        raise T.ShapeError(f"channel mismatch: search {search.shape} vs target {target.shape}")
    if target.shape[1] > search.shape[1] or target.shape[2] > search.shape[2]:
        raise T.ShapeError(f"target {target.shape} larger than search {search.shape}")


def xcorr_plain(search: Tensor, target: Tensor) -> ScoreMap:
    """Slide ``target`` over ``search`` as a convolution kernel (stride 1, no padding)."""
    _check_pair(search, target)
    kernel = T.reshape(target, (1,) + target.shape)
    return ScoreMap(T.conv2d(search, kernel))


def xcorr_double(ysm: Tensor, ytm: Tensor, ysv: Tensor, ytv: Tensor, lam: float) -> ScoreMap:
    if ysm.shape != ysv.shape or ytm.shape != ytv.shape:
        raise T.ShapeError(
            f"mean/variance shapes differ: {ysm.shape}/{ysv.shape}, {ytm.shape}/{ytv.shape}"
        )
    g_mean = xcorr_plain(ysm, ytm).values
    g_var = xcorr_plain(ysv, ytv).values
    return ScoreMap(g_mean + g_var * float(lam))


def normalize_variance(v: Tensor, rho: float) -> Tensor:
    """Per-channel affine map of ``v`` onto ``[1, rho]`` using the channel min and max.

    A channel with no spread maps to all ones.
    """
    if rho < 1:
        raise ValueError("rho must be >= 1")
    if v.ndim != 3:
        raise T.ShapeError(f"variance must be C×H×W, got {v.shape}")
    lo = T.expand(T.reduce("min", v, axes=(1, 2), keepdims=True), v.shape)
    hi = T.expand(T.reduce("max", v, axes=(1, 2), keepdims=True), v.shape)
    span = hi - lo
    flat = (span.data < DEGENERATE_RANGE).astype(np.float64)
    keep = Tensor(1.0 - flat)
    scaled = ((v - lo) * keep) / (span + Tensor(flat))
    return scaled * float(rho - 1.0) + 1.0


def penalized_correlation(sm: Tensor, tm: Tensor, vs: Tensor, vt: Tensor) -> Tensor:
    """``out[px,py] = sum_{c,i,j} 2 s[c,px+i,py+j] t[c,i,j] / (vs[c,px+i,py+j] + vt[c,i,j])``.

    ``vs`` and ``vt`` are already normalised variances (all >= 1).
    """
    _check_pair(sm, tm)
    if vs.shape != sm.shape or vt.shape != tm.shape:
        raise T.ShapeError("normalised variance shapes must match the mean features")
    c, ht, wt = tm.shape
    _, hs, ws = sm.shape
    ho, wo = hs - ht + 1, ws - wt + 1
    s_win = sliding_window_view(sm.data, (ht, wt), axis=(1, 2))
    v_win = sliding_window_view(vs.data, (ht, wt), axis=(1, 2))
    t_b = tm.data[:, None, None]
    ratio = v_win + vt.data[:, None, None]
    np.divide(2.0, ratio, out=ratio)
    weighted_t = t_b * ratio
    term = s_win * weighted_t
    out = term.sum(axis=(0, 3, 4))[None]

    def vjp(g):
        gb = g[0][None, :, :, None, None]
        d_swin = weighted_t * gb
        d_t = (s_win * gb * ratio).sum(axis=(1, 2))
        # d(term)/d(denominator) = -term * ratio / 2
        d_den = term * ratio
        d_den *= gb
        d_den *= -0.5
        d_vt = d_den.sum(axis=(1, 2))
        d_s = np.zeros(sm.shape)
        d_v = np.zeros(vs.shape)
        if ho * wo <= ht * wt:
            for p in range(ho):
                for q in range(wo):
                    d_s[:, p:p + ht, q:q + wt] += d_swin[:, p, q]
                    d_v[:, p:p + ht, q:q + wt] += d_den[:, p, q]
        else:
            for i in range(ht):
                for j in range(wt):
                    d_s[:, i:i + ho, j:j + wo] += d_swin[..., i, j]
                    d_v[:, i:i + ho, j:j + wo] += d_den[..., i, j]
        return d_s, d_t, d_v, d_vt

    return _emit(out, (sm, tm, vs, vt), vjp)


def xcorr_penalized(ysm: Tensor, ytm: Tensor, ysv: Tensor, ytv: Tensor, rho: float,
                    target_vn: Tensor | None = None) -> ScoreMap:
    """Penalised correlation; ``target_vn`` reuses a cached normalised target variance."""
    if ysm.shape != ysv.shape or ytm.shape != ytv.shape:
        raise T.ShapeError(
            f"mean/variance shapes differ: {ysm.shape}/{ysv.shape}, {ytm.shape}/{ytv.shape}"
        )
    if np.any(ysv.data < 0) or np.any(ytv.data < 0):
        raise ValueError("variances must be non-negative")
    vs = normalize_variance(ysv, rho)
    vt = normalize_variance(ytv, rho) if target_vn is None else target_vn
    return ScoreMap(penalized_correlation(ysm, ytm, vs, vt))


def correlate(cfg: XcorrConfig, ysm: Tensor, ytm: Tensor, ysv: Tensor, ytv: Tensor,
              target_vn: Tensor | None = None) -> ScoreMap:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == "averaging":
        return xcorr_plain(ysm, ytm)
    if cfg.mode == "double_similarity":
        return xcorr_double(ysm, ytm, ysv, ytv, cfg.lam)
    return xcorr_penalized(ysm, ytm, ysv, ytv, cfg.rho, target_vn)


def cosine_window(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w)) if h > 1 or w > 1 else np.ones((h, w))


def peak_to_offset(score: ScoreMap | Tensor | np.ndarray, window_weight: float = 0.0):
    """Displacement of the (optionally window-blended) maximum from the map centre.

    Returns ``(d_row, d_col, peak_value)``; ties go to the smallest row, then
    column. ``peak_value`` is read from the unblended map.
    """
    if isinstance(score, ScoreMap):
        v = score.values.data[0]
    elif isinstance(score, Tensor):
        v = score.data.reshape(score.shape[-2:])
    else:
        v = np.asarray(score, dtype=np.float64)
        v = v.reshape(v.shape[-2:])
    if v.size == 0:
        raise ValueError("empty score map")
    if not 0.0 <= window_weight < 1.0:
        raise ValueError("window_weight must be in [0, 1)")
    h, w = v.shape
    blended = v
    if window_weight > 0:
        blended = (1.0 - window_weight) * v + window_weight * cosine_window(h, w)
    idx = int(np.argmax(blended))
    r, c = divmod(idx, w)
    return r - (h - 1) / 2.0, c - (w - 1) / 2.0, float(v[r, c])
