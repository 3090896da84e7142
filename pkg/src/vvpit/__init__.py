"""Siamese tracking on BEV point-cloud pseudo images with a variational feature network."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, default_config, load_config, parse_config
from .estimator import PillarVoxelizer, VVPITTracker
from .metrics import evaluate, evaluate_static, iou3d, precision_auc, success_auc
from .scene import Box3D, PointCloudFrame, PseudoImage, SceneConfig, generate_sequence, voxelize
from .tracker import TrackerConfig, track_sequence
from .trainer import TrainConfig, train
from .vnn import VfgnParams, aggregate, init_vfgn, sample_forward
from .xcorr import XcorrConfig, correlate

__all__ = [
    "Box3D", "Checkpoint", "CheckpointError", "ConfigError", "PillarVoxelizer",
    "PointCloudFrame", "PseudoImage", "RunConfig", "SceneConfig", "TrackerConfig",
    "TrainConfig", "VVPITTracker", "VfgnParams", "XcorrConfig", "aggregate", "correlate",
    "default_config", "evaluate", "evaluate_static", "generate_sequence", "init_vfgn",
    "iou3d", "load_checkpoint", "load_config", "parse_config", "precision_auc",
    "sample_forward", "save_checkpoint", "success_auc", "track_sequence", "train", "voxelize",
]
__version__ = "0.1.0"
