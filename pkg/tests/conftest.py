import json
import math

import numpy as np
import pytest

from vvpit.scene import Box3D, PointCloudFrame, SceneConfig, generate_sequence
from vvpit.tensor import Tensor
from vvpit.vnn import VariationalConvLayer, VfgnParams


def stub_params(channel_weights=(1.0, 0.0, 0.0), scale=1.0, spread_bias=-60.0) -> VfgnParams:
    """One 1×1 layer copying a fixed mix of input channels, spread branch collapsed."""
    k = np.asarray(channel_weights, dtype=np.float64).reshape(1, 3, 1, 1)
    layer = VariationalConvLayer(
        Tensor.param(k), Tensor.param([0.0]),
        Tensor.param(np.zeros_like(k)), Tensor.param([spread_bias]), padding=0,
    )
    return VfgnParams([layer], adjust_scale=Tensor.param(scale), adjust_bias=Tensor.param(0.0))


def pattern_points(step=0.05):
    """Asymmetric L of dense points plus a blob, in object coordinates."""
    pts = []
    for x in np.arange(-1.8, 1.8, step):
        pts.append((x, -0.8, 1.0))
    for y in np.arange(-0.8, 0.8, step):
        pts.append((1.8, y, 1.4))
    for x in np.arange(-1.2, -0.6, step):
        for y in np.arange(0.1, 0.6, step):
            pts.append((x, y, 0.6))
    return np.array(pts)


def place(points, x, y, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    out = points.copy()
    out[:, 0] = c * points[:, 0] - s * points[:, 1] + x
    out[:, 1] = s * points[:, 0] + c * points[:, 1] + y
    return out


def pattern_frame(index, x, y, yaw):
    box = Box3D((x, y, 0.8), (4.0, 1.8, 1.6), yaw)
    return PointCloudFrame(place(pattern_points(), x, y, yaw), box, index)


@pytest.fixture(scope="session")
def small_sequences():
    cfg = SceneConfig(frame_count=10, seed=21)
    return [generate_sequence(SceneConfig(**{**cfg.__dict__, "seed": s})) for s in (21, 22, 23)]


@pytest.fixture(scope="session")
def reference():
    """Reference checkpoint, its record and the benchmark split it was trained on."""
    from fixtures.make_reference import HERE, reference_setup
    from vvpit.checkpoint import load_checkpoint
    from vvpit.config import RunConfig

    record = json.loads((HERE / "reference.json").read_text(encoding="utf-8"))
    cfg, train_seqs, test_seqs = reference_setup()
    values = dict(cfg.values)
    values.update({"mode": record["mode"], "lambda": record["lambda"], "rho": record["rho"]})
    return {
        "cfg": RunConfig(values),
        "train": train_seqs,
        "test": test_seqs,
        "path": HERE / "reference.vvpt",
        "checkpoint": load_checkpoint(HERE / "reference.vvpt"),
        "record": record,
    }
