"""scikit-learn style facade over voxelization, training and tracking.

``X`` is always a list of sequences (each a list of ``PointCloudFrame``);
a single sequence is accepted and wrapped.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import boxes_to_array, check_scalar, check_sequences
from .checkpoint import Checkpoint
from .config import DEFAULTS, RunConfig
from .metrics import _result_for, report_from_results
from .scene import voxelize
from .tracker import TrackerConfig, track_sequence
from .trainer import train
from .xcorr import canonical_mode


class PillarVoxelizer(TransformerMixin, BaseEstimator):
    """Frames to fixed-extent BEV pseudo-images, stacked as ``(n_frames, 3, H, W)``.

    With ``extent=None`` the extent is fitted as the bounding square of all
    points seen in ``fit``.
    """

    def __init__(self, cell_size=0.3, extent=None):
        self.cell_size = cell_size
        self.extent = extent

    def fit(self, X, y=None):
        check_scalar(self.cell_size, "cell_size", low=0, low_open=True)
        seqs = check_sequences(X, min_frames=1)
        if self.extent is not None:
            ext = tuple(float(v) for v in self.extent)
            if len(ext) != 4 or ext[1] <= ext[0] or ext[3] <= ext[2]:
                raise ValueError(f"bad extent {self.extent!r}")
        else:
            pts = np.concatenate([f.points for s in seqs for f in s])
            if not len(pts):
                raise ValueError("no points to fit an extent on")
            c = self.cell_size
            lo = np.floor(pts[:, :2].min(axis=0) / c) * c
            hi = np.ceil(pts[:, :2].max(axis=0) / c + 1) * c
            ext = (lo[0], hi[0], lo[1], hi[1])
        self.extent_ = ext
        self.n_features_out_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "extent_")
        seqs = check_sequences(X, min_frames=1)
        imgs = [voxelize(f, self.cell_size, self.extent_).channels.data for s in seqs for f in s]
        return np.stack(imgs)


class VVPITTracker(BaseEstimator):
    """Variational pseudo-image tracker.

    ``fit`` trains the feature network on ground-truth sequences, ``predict``
    returns one ``(n_frames, 7)`` box array per sequence (cx, cy, cz, l, w,
    h, yaw) and ``score`` is the Success AUC in percent.
    """

    def __init__(self, mode="penalization", n_samples=8, lam=DEFAULTS["lambda"],
                 rho=DEFAULTS["rho"], steps=DEFAULTS["steps"], lr=DEFAULTS["lr"],
                 cell_size=DEFAULTS["cell_size"], target_size=DEFAULTS["target_size"],
                 search_size=DEFAULTS["search_size"], channels=DEFAULTS["channels"],
                 random_state=0):
        self.mode = mode
        self.n_samples = n_samples
        self.lam = lam
        self.rho = rho
        self.steps = steps
        self.lr = lr
        self.cell_size = cell_size
        self.target_size = target_size
        self.search_size = search_size
        self.channels = channels
        self.random_state = random_state

    def _run_config(self) -> RunConfig:
        canonical_mode(self.mode)
        check_scalar(self.n_samples, "n_samples", int, low=1)
        check_scalar(self.steps, "steps", int, low=0)
        check_scalar(self.random_state, "random_state", int, low=0)
        values = dict(DEFAULTS)
        values.update(mode=self.mode, P=self.n_samples, P_train=self.n_samples,
                      steps=self.steps, seed=self.random_state,
                      cell_size=self.cell_size, target_size=self.target_size,
                      search_size=self.search_size, channels=tuple(self.channels))
        values["lambda"] = self.lam
        values["rho"] = self.rho
        values["lr"] = self.lr
        cfg = RunConfig(values)
        cfg.validate()
        return cfg

    def _geometry(self) -> TrackerConfig:
        return self.run_config_.tracker()

    def fit(self, X, y=None):
        cfg = self._run_config()
        seqs = check_sequences(X)
        self.run_config_ = cfg
        self.checkpoint_: Checkpoint = train(seqs, cfg.train(), cfg.init_params(), cfg.tracker())
        self.params_ = self.checkpoint_.params(cfg["leaky_slope"])
        self.loss_ = self.checkpoint_.running_loss
        return self

    def _tracks(self, seqs):
        geom = self._geometry()
        return [track_sequence(self.params_, s, geom) for s in seqs]

    def predict(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "params_")
        seqs = check_sequences(X)
        return [boxes_to_array([b for b, _ in t]) for t in self._tracks(seqs)]

    def predict_scores(self, X) -> list[np.ndarray]:
        """Per-frame confidence of each predicted box."""
        check_is_fitted(self, "params_")
        seqs = check_sequences(X)
        return [np.array([s for _, s in t]) for t in self._tracks(seqs)]

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "params_")
        seqs = check_sequences(X)
        results = [_result_for(s, [b for b, _ in t]) for s, t in zip(seqs, self._tracks(seqs))]
        return report_from_results(results).success
