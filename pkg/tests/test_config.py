import pytest

from vvpit.config import SCHEMA, ConfigError, default_config, load_config, parse_config


def test_render_lists_every_key_in_schema_order():
    lines = default_config().render().splitlines()
    assert [ln.split(" = ")[0] for ln in lines] == [k for k, _, _, _ in SCHEMA]


def test_render_round_trips():
    cfg = default_config()
    again = parse_config(cfg.render())
    assert again.values == cfg.values
    custom = parse_config("seed = 7\nmode = double\nspeed_range = 0.1, 0.2\npos_weight = 3\n")
    assert parse_config(custom.render()).values == custom.values


def test_comments_and_overrides():
    cfg = parse_config("# comment\n\nsteps = 5   # trailing\nchannels = 3,4,4\n")
    assert cfg["steps"] == 5 and cfg["channels"] == (3, 4, 4)
    assert cfg["pos_weight"] is None


def test_every_bad_key_is_reported():
    with pytest.raises(ConfigError) as err:
        parse_config("bogus = 1\nsteps = many\nmode = median\nnot a pair\n")
    msg = str(err.value)
    for part in ("bogus", "steps", "mode", "line 4"):
        assert part in msg


def test_range_errors_surface_as_config_errors():
    for text in ("rotation_candidates = 2\n", "dropout = 1.5\n", "channels = 4,8\n",
                 "threads = 0\n", "rho = 0.5\n", "P = 0\n"):
        with pytest.raises(ConfigError):
            parse_config(text)


def test_sub_seeds_differ_by_purpose():
    cfg = default_config()
    seeds = {cfg.tracker().seed, cfg.train().seed, cfg.sequence_seed(0), cfg.sequence_seed(1)}
    assert len(seeds) == 4


def test_load_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("frames = 9\n", encoding="utf-8")
    assert load_config(p)["frames"] == 9
