import subprocess
import sys
import time

import pytest

from vvpit.checkpoint import load_checkpoint
from vvpit.cli import main
from vvpit.config import SCHEMA
from vvpit.viz import read_pnm

SMALL = "sequences = 3\nframes = 10\nsteps = 50\ncheckpoint_interval = 25\nseed = 4\n"


def run_pipeline(root, threads):
    cfg = root / "run.cfg"
    cfg.write_text(SMALL, encoding="utf-8")
    common = ["--config", str(cfg), "--threads", str(threads)]
    assert main(["gen", *common, "--out", str(root / "data")]) == 0
    assert main(["train", *common, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    ck = str(root / "run" / "checkpoint.vvpt")
    assert main(["track", *common, "--checkpoint", ck, "--sequence", str(root / "data" / "seq_001"),
                 "--out", str(root / "track.csv")]) == 0
    for mode in ("averaging", "double", "penalization"):
        assert main(["eval", *common, "--checkpoint", ck, "--data", str(root / "data"),
                     "--mode", mode, "--out", str(root / f"report_{mode}.csv")]) == 0
    assert main(["viz", "--config", str(cfg), "--checkpoint", ck, "--sequence",
                 str(root / "data" / "seq_000"), "--frame", "4", "--out", str(root / "viz")]) == 0


def artifacts(root):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*")) if p.is_file() and p.name != "run.cfg"
    }


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = {}
    for name, threads in (("a", 1), ("b", 1), ("c", 2)):
        root = tmp_path_factory.mktemp(name)
        t0 = time.time()
        run_pipeline(root, threads)
        out[name] = (root, time.time() - t0)
    return out


def test_smoke_pipeline_is_fast_and_complete(runs):
    root, seconds = runs["a"]
    assert seconds < 300
    names = artifacts(root)
    for expect in ("data/seq_000/gt.csv", "data/seq_002/frame_00009.xyz", "run/checkpoint.vvpt",
                   "run/checkpoint_000025.vvpt", "run/loss.csv", "run/config.txt", "track.csv",
                   "report_double.csv", "viz/mean.pgm", "viz/variance.pgm", "viz/composite.ppm"):
        assert expect in names
    loss = (root / "run" / "loss.csv").read_text().splitlines()
    assert loss[0] == "step,loss" and len(loss) == 51
    assert load_checkpoint(root / "run" / "checkpoint.vvpt").step == 50
    report = (root / "report_double.csv").read_text().splitlines()
    assert report[0] == "mode,P,lambda,rho,success,precision,frames,seed"
    assert report[1].startswith("double,8,")
    assert read_pnm(root / "viz" / "composite.ppm").shape[2] == 3


def test_reruns_are_byte_identical(runs):
    assert artifacts(runs["a"][0]) == artifacts(runs["b"][0])


def test_thread_count_does_not_change_outputs(runs):
    assert artifacts(runs["a"][0]) == artifacts(runs["c"][0])


def test_print_config(capsys):
    assert main(["--print-config"]) == 0
    keys = [ln.split(" = ")[0] for ln in capsys.readouterr().out.splitlines()]
    assert keys == [k for k, _, _, _ in SCHEMA]


def test_unknown_mode_names_valid_modes(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "vvpit.cli", "eval", "--checkpoint", "x", "--data", "y",
         "--mode", "median", "--out", str(tmp_path / "r.csv")],
        capture_output=True, text=True,
    )
    assert proc.returncode != 0
    for mode in ("averaging", "double", "penalization"):
        assert mode in proc.stderr


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\nsteps = x\n", encoding="utf-8")
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    err = capsys.readouterr().err
    assert "bogus" in err and "steps" in err and len(err.strip().splitlines()) == 1


def test_data_error_exit_code(tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 3
    (tmp_path / "bad.vvpt").write_bytes(b"JUNK")
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.vvpt"), "--data", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "r.csv")]) == 3


def test_numeric_failure_exit_code(tmp_path, runs):
    root = runs["a"][0]
    cfg = tmp_path / "nan.cfg"
    cfg.write_text("steps = 2\nadjust_scale_init = nan\n", encoding="utf-8")
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"),
                 "--out", str(tmp_path / "o")]) == 4
