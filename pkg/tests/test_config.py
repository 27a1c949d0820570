import json

import pytest

from app.core import config
from app.core.config import Settings, build_run_config
from app.core.errors import ConfigError


def test_defaults():
    cfg = build_run_config()
    assert cfg.sequence.l_o == 6
    assert cfg.sequence.l_s == 6
    assert cfg.noise.beta == 0.3
    assert cfg.inference.condition_policy == "all-positive"
    assert cfg.train.op == "perm"


def test_precedence(tmp_path, monkeypatch):
    monkeypatch.setattr(config.settings, "seed", 11)
    assert build_run_config().seed == 11

    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 3, "noise": {"beta": 0.2, "steps": 8}}))
    cfg = build_run_config(str(path))
    assert (cfg.seed, cfg.noise.beta, cfg.noise.steps) == (3, 0.2, 8)

    cfg = build_run_config(str(path), {"seed": 9, "noise": {"beta": 0.4}})
    assert (cfg.seed, cfg.noise.beta, cfg.noise.steps) == (9, 0.4, 8)


def test_env_prefix(monkeypatch):
    monkeypatch.setenv("DCDR_SEED", "13")
    monkeypatch.setenv("DCDR_LOG_LEVEL", "debug")
    s = Settings()
    assert s.seed == 13
    assert s.log_level == "debug"


def test_log_level_normalised():
    assert build_run_config(overrides={"log_level": "warning"}).log_level == "WARNING"
    with pytest.raises(ConfigError):
        build_run_config(overrides={"log_level": "loud"})


@pytest.mark.parametrize(
    "overrides",
    [
        {"sequence": {"l_o": 9}},
        {"sequence": {"l_o": 0}},
        {"sequence": {"l_o": 5, "l_s": 4}},
        {"noise": {"beta": 1.0}},
        {"noise": {"steps": 0}},
        {"model": {"tau": 0.0}},
        {"inference": {"beam": 0}},
        {"inference": {"condition_policy": "mask"}},
        {"inference": {"condition_policy": "mask", "condition_mask": [1, 0, 2, 1, 1, 1]}},
        {"inference": {"condition_policy": "mask", "condition_mask": [1, 0, 1]}},
        {"world": {"position_bias": [0.5, 0.5]}},
        {"world": {"position_bias": [1.5] * 6}},
        {"unknown_key": 1},
    ],
)
def test_invalid(overrides):
    with pytest.raises(ConfigError):
        build_run_config(overrides=overrides)


def test_mask_matching_length():
    cfg = build_run_config(overrides={"inference": {"condition_policy": "mask", "condition_mask": [1, 0, 1, 1, 1, 1]}})
    assert cfg.inference.condition_mask == [1, 0, 1, 1, 1, 1]


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        build_run_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        build_run_config(str(bad))
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        build_run_config(str(listed))


def test_default_output_length_follows_short_pool():
    cfg = build_run_config(overrides={"sequence": {"l_s": 2}})
    assert (cfg.sequence.l_o, cfg.sequence.l_s) == (2, 2)
    assert build_run_config(overrides={"sequence": {"l_s": 8}}).sequence.l_o == 6
