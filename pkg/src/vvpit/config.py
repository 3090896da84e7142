"""Flat ``key = value`` run configuration shared by every CLI command."""

from __future__ import annotations

from dataclasses import dataclass

from .scene import SceneConfig
from .seeding import derive_seed
from .tracker import TrackerConfig
from .trainer import TrainConfig
from .vnn import VfgnParams, init_vfgn
from .xcorr import XcorrConfig, canonical_mode


class ConfigError(ValueError):
    """Invalid or unknown configuration keys."""


def _pair(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated numbers")
    return float(parts[0]), float(parts[1])


def _ints(text: str) -> tuple[int, ...]:
    vals = tuple(int(p.strip()) for p in text.split(","))
    if len(vals) < 2 or any(v < 1 for v in vals):
        raise ValueError("expected at least two positive integers")
    return vals


def _optional_float(text: str):
    return None if text.strip().lower() == "auto" else float(text)


def _mode(text: str) -> str:
    canonical_mode(text)
    return text


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# (key, parser, default, description); order is the --print-config order
SCHEMA = [
    ("seed", int, 0, "master seed; every random stream derives from it"),
    ("threads", int, 1, "worker processes for generation and evaluation"),
    ("sequences", int, 20, "sequences written by gen"),
    ("frames", int, 60, "frames per generated sequence"),
    ("speed_range", _pair, (0.0, 0.6), "object speed range, m/frame"),
    ("yaw_rate_range", _pair, (-0.03, 0.03), "object yaw rate range, rad/frame"),
    ("object_density", float, 20.0, "surface points per m^2 on boxes"),
    ("ground_density", float, 0.5, "ground points per m^2"),
    ("clutter_count", int, 6, "static distractor boxes per sequence"),
    ("noise_sigma", float, 0.02, "point position noise, m"),
    ("dropout", float, 0.1, "per-frame point removal probability"),
    ("channels", _ints, (3, 8, 16, 16), "feature network widths, input first"),
    ("leaky_slope", float, 0.1, "negative slope between layers"),
    ("var_bias_init", float, -3.0, "initial bias of the spread sub-layers"),
    ("adjust_scale_init", float, 10.0, "initial score adjustment scale"),
    ("mode", _mode, "penalization", "averaging | double | penalization"),
    ("lambda", float, 10.0, "variance similarity weight (double mode)"),
    ("rho", float, 1.25, "maximum variance penalty (penalization mode)"),
    ("P", int, 8, "network samples per region at inference"),
    ("cell_size", float, 0.3, "voxel cell size, m"),
    ("target_size", int, 16, "target region side, cells"),
    ("search_size", int, 26, "search region side, cells"),
    ("rotation_step", float, 0.1, "yaw step between rotation candidates, rad"),
    ("rotation_candidates", int, 3, "odd number of yaw candidates"),
    ("rotation_penalty", float, 0.98, "score multiplier for non-zero rotations"),
    ("window_weight", float, 0.25, "cosine window blend weight"),
    ("steps", int, 2000, "training steps"),
    ("lr", float, 0.01, "learning rate"),
    ("momentum", float, 0.9, "SGD momentum"),
    ("P_train", int, 8, "network samples per region during training"),
    ("gap_min", int, 1, "minimum frame gap of a training pair"),
    ("gap_max", int, 4, "maximum frame gap of a training pair"),
    ("label_radius", float, 2.0, "positive label radius, cells"),
    ("pos_weight", _optional_float, None, "positive class weight, auto = balanced"),
    ("neg_weight", _optional_float, None, "negative class weight, auto = balanced"),
    ("checkpoint_interval", int, 0, "steps between intermediate checkpoints, 0 = off"),
]
DEFAULTS = {key: default for key, _, default, _ in SCHEMA}
PARSERS = {key: parser for key, parser, _, _ in SCHEMA}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    # ---- builders -------------------------------------------------------

    def scene(self, seed: int) -> SceneConfig:
        v = self.values
        return SceneConfig(
            frame_count=v["frames"],
            speed_range=v["speed_range"],
            yaw_rate_range=v["yaw_rate_range"],
            object_density=v["object_density"],
            ground_density=v["ground_density"],
            clutter_count=v["clutter_count"],
            noise_sigma=v["noise_sigma"],
            dropout=v["dropout"],
            seed=seed,
        )

    def xcorr(self, mode: str | None = None) -> XcorrConfig:
        v = self.values
        return XcorrConfig(mode or v["mode"], v["lambda"], v["rho"])

    def tracker(self, mode: str | None = None) -> TrackerConfig:
        v = self.values
        return TrackerConfig(
            P=v["P"],
            xcorr=self.xcorr(mode),
            rotation_step=v["rotation_step"],
            rotation_candidates=v["rotation_candidates"],
            rotation_score_penalty=v["rotation_penalty"],
            target_size=v["target_size"],
            search_size=v["search_size"],
            cell_size=v["cell_size"],
            window_weight=v["window_weight"],
            seed=derive_seed(v["seed"], "tracker"),
        )

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            steps=v["steps"],
            lr=v["lr"],
            momentum=v["momentum"],
            P_train=v["P_train"],
            gap_min=v["gap_min"],
            gap_max=v["gap_max"],
            label_radius=v["label_radius"],
            pos_weight=v["pos_weight"],
            neg_weight=v["neg_weight"],
            seed=derive_seed(v["seed"], "train"),
            checkpoint_interval=v["checkpoint_interval"],
        )

    def init_params(self) -> VfgnParams:
        v = self.values
        return init_vfgn(
            v["channels"],
            seed=derive_seed(v["seed"], "init"),
            slope=v["leaky_slope"],
            var_bias=v["var_bias_init"],
            adjust_scale=v["adjust_scale_init"],
        )

    def sequence_seed(self, index: int, split: str = "sequence") -> int:
        return derive_seed(self.values["seed"], split, index)

    def render(self, skip=()) -> str:
        return "".join(
            f"{key} = {_fmt(self.values[key])}\n" for key, _, _, _ in SCHEMA if key not in skip
        )

    def validate(self) -> None:
        """Build every sub-config once so range errors surface as ConfigError."""
        problems = []
        checks = [
            ("scene", lambda: self.scene(0).validate()),
            ("tracker", self.tracker),
            ("train", self.train),
        ]
        for label, fn in checks:
            try:
                fn()
            except ValueError as err:
                problems.append(f"{label}: {err}")
        if self.values["channels"][0] != 3:
            problems.append("channels: first width must be 3 (pseudo-image channels)")
        if self.values["threads"] < 1:
            problems.append("threads: must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))


def default_config() -> RunConfig:
    return RunConfig(dict(DEFAULTS))


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Reports every bad key."""
    values = dict((base or default_config()).values)
    problems = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in PARSERS:
            problems.append(f"unknown key '{key}'")
            continue
        try:
            values[key] = PARSERS[key](value)
        except ValueError as err:
            problems.append(f"invalid value for '{key}': {value!r} ({err})")
    if problems:
        raise ConfigError("; ".join(problems))
    cfg = RunConfig(values)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
