"""Scaled-down comparison of the correlation modes on synthetic sequences.

For each benchmark seed a fresh train/test split is generated, one network
is trained per mode, and every mode is evaluated next to the static-box
baseline (box frozen at the initial position).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

from .config import RunConfig, default_config
from .metrics import EvalReport, evaluate, evaluate_static
from .scene import generate_sequence
from .seeding import derive_seed
from .trainer import train

logger = logging.getLogger(__name__)

BENCH_MODES = ("averaging", "double_similarity", "penalization")


@dataclass
class TrendRow:
    seed: int
    mode: str
    success: float
    precision: float
    frames: int


def make_split(cfg: RunConfig, seed: int, n_train: int, n_test: int, frames: int):
    def seqs(tag, n):
        out = []
        for i in range(n):
            scene = replace(cfg.scene(derive_seed(seed, tag, i)), frame_count=frames)
            out.append(generate_sequence(scene))
        return out

    return seqs("bench-train", n_train), seqs("bench-test", n_test)


def run_seed(cfg: RunConfig, seed: int, n_train: int = 20, n_test: int = 5, frames: int = 60,
             modes=BENCH_MODES, threads: int = 1, keep: dict | None = None) -> list[TrendRow]:
    values = dict(cfg.values)
    values["seed"] = seed
    run = RunConfig(values)
    train_seqs, test_seqs = make_split(run, seed, n_train, n_test, frames)
    static = evaluate_static(test_seqs)
    rows = [TrendRow(seed, "static", static.success, static.precision, static.frames)]
    for mode in modes:
        t0 = time.time()
        geom = run.tracker(mode)
        ckpt = train(train_seqs, run.train(), run.init_params(), geom)
        report: EvalReport = evaluate(ckpt.params(run["leaky_slope"]), geom, test_seqs, threads)
        logger.info("seed %d %s: success %.2f precision %.2f (%.0fs)", seed, mode,
                    report.success, report.precision, time.time() - t0)
        rows.append(TrendRow(seed, mode, report.success, report.precision, report.frames))
        if keep is not None:
            keep[(seed, mode)] = ckpt
    return rows


def run_trend(cfg: RunConfig | None = None, seeds=(0, 1, 2, 3, 4), **kwargs) -> list[TrendRow]:
    cfg = cfg or default_config()
    rows = []
    for seed in seeds:
        rows += run_seed(cfg, seed, **kwargs)
    return rows


def summarize(rows: list[TrendRow]) -> dict[str, float]:
    """Mean Success per mode over seeds."""
    out: dict[str, list[float]] = {}
    for r in rows:
        out.setdefault(r.mode, []).append(r.success)
    return {k: sum(v) / len(v) for k, v in out.items()}


TREND_HEADER = "seed,mode,success,precision,frames"


def format_rows(rows: list[TrendRow]) -> str:
    lines = [TREND_HEADER]
    lines += [f"{r.seed},{r.mode},{r.success:.6f},{r.precision:.6f},{r.frames}" for r in rows]
    return "\n".join(lines) + "\n"

