import json

import pytest

from ehrcnn.config import (STAGE_OFFSETS, ConfigError, RunConfig, apply_overrides, bundled_config,
                           load_run_config, parse_value, report_header, stage_seed)


def test_bundled_desk_config_is_valid():
    cfg = load_run_config(bundled_config("desk"))
    assert cfg.cbow_config().window == 20
    assert cfg.cohort_spec().controls_per_case == 2
    assert cfg.cnn_config().filter_sizes == (3, 4, 5)


def test_parse_value():
    assert parse_value("20") == 20
    assert parse_value("0.5") == 0.5
    assert parse_value("[3,4]") == [3, 4]
    assert parse_value("true") is True
    assert parse_value("W2vFixed") == "W2vFixed"


def test_dotted_overrides():
    d = apply_overrides({"cbow": {"window": 5}}, {"cbow.window": 20, "train.patience": 3})
    assert d == {"cbow": {"window": 20}, "train": {"patience": 3}}
    with pytest.raises(ConfigError):
        apply_overrides({"cbow": 3}, {"cbow.window": 1})


def test_load_with_overrides_and_seed(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "cbow": {"dim": 10}}))
    cfg = load_run_config(path, {"cbow.dim": 200}, seed=7)
    assert cfg.cbow_config().dim == 200 and cfg.seed == 7


@pytest.mark.parametrize("bad", [
    {"nonsense": {}},
    {"cbow": {"windw": 3}},
    {"cohort": {"target_codes": ["T"], "min_len": 300, "max_len": 250}},
    {"seed": -1},
    {"early_prediction": [-5]},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "x.json")


def test_stage_seeds_are_distinct_and_documented():
    cfg = RunConfig(seed=100)
    seeds = {cfg.synth_config().seed, cfg.cbow_config().seed, cfg.cohort_spec().seed,
             cfg.cnn_config().seed, cfg.train_config().seed}
    assert len(seeds) == 5
    assert cfg.cbow_config().seed == 100 + STAGE_OFFSETS["cbow"]
    assert stage_seed(2**64 - 1, "cbow") == 0


def test_fingerprint_tracks_content():
    a = RunConfig.from_dict({"seed": 1, "cbow": {"dim": 10}})
    b = RunConfig.from_dict({"cbow": {"dim": 10}, "seed": 1})
    c = RunConfig.from_dict({"seed": 1, "cbow": {"dim": 11}})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()
    head = report_header(a)
    assert head["config_fingerprint"] == a.fingerprint() and head["seed"] == 1
    assert RunConfig.from_dict(a.to_dict()).fingerprint() == a.fingerprint()
