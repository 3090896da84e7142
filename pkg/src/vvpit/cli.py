"""``vvpit`` command line: gen, train, track, eval, viz and bench.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, default_config, load_config
from .metrics import REPORT_HEADER, evaluate, format_report_row
from .scene import generate_sequence, read_sequence, write_sequence
from .tracker import EmptyRegionError, format_track, track_sequence
from .trainer import train

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CLI_MODES = {"averaging": "averaging", "double": "double_similarity", "penalization": "penalization"}

logger = logging.getLogger("vvpit")


class DataError(Exception):
    """Missing or malformed input files."""


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "threads", None) is not None:
        cfg.values["threads"] = args.threads
        cfg.validate()
    return cfg


def _write_text(path, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_sequence(path):
    if not os.path.isfile(os.path.join(path, "gt.csv")):
        raise DataError(f"{path}: no gt.csv, not a sequence directory")
    try:
        return read_sequence(path)
    except (OSError, ValueError) as err:
        raise DataError(f"{path}: {err}") from err


def _read_dataset(path):
    if not os.path.isdir(path):
        raise DataError(f"{path}: not a directory")
    dirs = sorted(d for d in os.listdir(path) if os.path.isfile(os.path.join(path, d, "gt.csv")))
    if not dirs:
        raise DataError(f"{path}: contains no sequences")
    return [_read_sequence(os.path.join(path, d)) for d in dirs]


def _load_params(path, cfg: RunConfig):
    try:
        return load_checkpoint(path).params(cfg["leaky_slope"])
    except OSError as err:
        raise DataError(f"{path}: {err}") from err


def _gen_one(job):
    scene, out = job
    write_sequence(out, generate_sequence(scene))
    return out


def cmd_gen(args) -> None:
    cfg = _config(args)
    jobs = [
        (cfg.scene(cfg.sequence_seed(i)), os.path.join(args.out, f"seq_{i:03d}"))
        for i in range(cfg["sequences"])
    ]
    if cfg["threads"] > 1:
        with ProcessPoolExecutor(cfg["threads"]) as pool:
            list(pool.map(_gen_one, jobs))
    else:
        for job in jobs:
            _gen_one(job)
    logger.info("wrote %d sequences to %s", len(jobs), args.out)


def cmd_train(args) -> None:
    cfg = _config(args)
    data = _read_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    losses = []

    def snapshot(ckpt):
        save_checkpoint(ckpt, os.path.join(args.out, f"checkpoint_{ckpt.step:06d}.vvpt"))

    def progress(step, value):
        losses.append(value)
        if (step + 1) % 100 == 0:
            logger.info("step %d loss %.4f", step + 1, value)

    ckpt = train(data, cfg.train(), cfg.init_params(), cfg.tracker(), snapshot, progress)
    save_checkpoint(ckpt, os.path.join(args.out, "checkpoint.vvpt"))
    _write_text(os.path.join(args.out, "loss.csv"),
                "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)))
    # worker count never changes results, so it stays out of the echo
    _write_text(os.path.join(args.out, "config.txt"), cfg.render(skip=("threads",)))


def cmd_track(args) -> None:
    cfg = _config(args)
    params = _load_params(args.checkpoint, cfg)
    frames = _read_sequence(args.sequence)
    geom = cfg.tracker()
    track = track_sequence(params, frames, geom)
    _write_text(args.out, format_track(frames, track, cfg["mode"]))


def cmd_eval(args) -> None:
    cfg = _config(args)
    params = _load_params(args.checkpoint, cfg)
    data = _read_dataset(args.data)
    mode = args.mode or cfg["mode"]
    geom = cfg.tracker(CLI_MODES.get(mode, mode))
    report = evaluate(params, geom, data, cfg["threads"])
    row = format_report_row(mode, report, geom.P, geom.xcorr.lam, geom.xcorr.rho, cfg["seed"])
    _write_text(args.out, REPORT_HEADER + "\n" + row + "\n")
    print(f"{mode}: success {report.success:.2f} precision {report.precision:.2f} "
          f"over {report.frames} frames")


def cmd_viz(args) -> None:
    from .viz import emit_feature_maps

    cfg = _config(args)
    params = _load_params(args.checkpoint, cfg)
    frames = _read_sequence(args.sequence)
    match = [f for f in frames if f.frame_index == args.frame]
    if not match:
        raise DataError(f"{args.sequence}: no frame {args.frame}")
    frame = match[0]
    emit_feature_maps(params, frame, frame.gt_box, cfg["P"], args.out, cfg.tracker())


def cmd_bench(args) -> None:
    from .benchmark import format_rows, run_trend, summarize

    cfg = _config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_trend(cfg, seeds, n_train=args.train_sequences, n_test=args.test_sequences,
                     frames=cfg["frames"], threads=cfg["threads"])
    _write_text(args.out, format_rows(rows))
    for mode, value in summarize(rows).items():
        print(f"{mode}: mean success {value:.2f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--threads", type=int, default=None, help="worker process cap")

    parser = argparse.ArgumentParser(prog="vvpit", description=__doc__.splitlines()[0])
    parser.add_argument("--print-config", action="store_true",
                        help="print the full configuration (defaults merged with --config)")
    parser.add_argument("--config", help="configuration file for --print-config")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen", parents=[common], help="write synthetic sequences")
    p.add_argument("--out", required=True, help="output directory for seq_NNN folders")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train the feature network")
    p.add_argument("--data", required=True, help="directory of sequences written by gen")
    p.add_argument("--out", required=True, help="output directory for checkpoints and loss.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", parents=[common], help="track one sequence")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (.vvpt)")
    p.add_argument("--sequence", required=True, help="one sequence directory")
    p.add_argument("--out", required=True, help="track CSV to write")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", parents=[common], help="Success/Precision over a dataset")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (.vvpt)")
    p.add_argument("--data", required=True, help="directory of sequences")
    p.add_argument("--mode", choices=sorted(CLI_MODES), help="correlation mode, default from config")
    p.add_argument("--out", required=True, help="report CSV to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", parents=[common], help="mean/variance feature images")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (.vvpt)")
    p.add_argument("--sequence", required=True, help="one sequence directory")
    p.add_argument("--frame", type=int, required=True, help="frame index within the sequence")
    p.add_argument("--out", required=True, help="output directory for the images")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("bench", parents=[common], help="mode comparison on fresh splits")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated benchmark seeds")
    p.add_argument("--train-sequences", type=int, default=20, help="training sequences per seed")
    p.add_argument("--test-sequences", type=int, default=5, help="test sequences per seed")
    p.add_argument("--out", required=True, help="trend CSV to write")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        if args.print_config:
            sys.stdout.write(_config(args).render())
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        # single-threaded BLAS keeps every result independent of the worker count
        with threadpool_limits(limits=1):
            args.func(args)
        return 0
    except ConfigError as err:
        print(f"vvpit: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, EmptyRegionError, FileNotFoundError) as err:
        print(f"vvpit: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ZeroDivisionError) as err:
        print(f"vvpit: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
