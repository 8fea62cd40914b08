import json
from pathlib import Path

import pytest

from src.config import apply_section, build_settings, load_run_config
from src.errors import ConfigError
from src.models import RnnSpec
from src.optim import SgdConfig


@pytest.fixture
def clean_env(monkeypatch):
    for name in ("VP_SEED", "VP_OUT", "VP_LOG_LEVEL", "VP_WORKERS"):
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


def test_defaults(clean_env):
    s = build_settings()
    assert (s.seed, s.out, s.workers, s.log_level) == (0, Path("runs"), 1, "INFO")
    assert s.sections["sgd"] == {}


def test_cli_beats_environment(clean_env):
    clean_env.setenv("VP_SEED", "9")
    clean_env.setenv("VP_OUT", "/tmp/elsewhere")
    clean_env.setenv("VP_WORKERS", "3")
    clean_env.setenv("VP_LOG_LEVEL", "debug")
    s = build_settings()
    assert (s.seed, s.out, s.workers, s.log_level) == (9, Path("/tmp/elsewhere"), 3, "DEBUG")
    s = build_settings(seed=4, out="here", workers=2, log_level="warning")
    assert (s.seed, s.out, s.workers, s.log_level) == (4, Path("here"), 2, "WARNING")


def test_bad_environment(clean_env):
    clean_env.setenv("VP_SEED", "abc")
    with pytest.raises(ConfigError):
        build_settings()


def test_seed_precedence(clean_env, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"sgd": {"seed": 11, "epochs": 3}}))
    # config value beats the environment default
    s = build_settings(config=cfg)
    sgd = s.resolve(SgdConfig(), "sgd")
    assert (sgd.seed, sgd.epochs) == (11, 3)
    # --seed beats the config
    sgd = build_settings(seed=2, config=cfg).resolve(SgdConfig(), "sgd")
    assert (sgd.seed, sgd.epochs) == (2, 3)
    # sections without a seed field are left alone
    assert build_settings(seed=2).resolve(RnnSpec(), "rnn") == RnnSpec()


def test_load_run_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "missing.json")
    p = tmp_path / "list.json"
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_run_config(p)
    p.write_text(json.dumps({"rnn": {}, "extras": {}}))
    with pytest.raises(ConfigError, match="extras"):
        load_run_config(p)


def test_apply_section():
    spec = apply_section(RnnSpec(), {"hidden_sizes": [100, 100, 50], "window_W": 25}, "rnn")
    assert spec.hidden_sizes == (100, 100, 50) and spec.window_W == 25
    assert apply_section(RnnSpec(), {}, "rnn") == RnnSpec()
    with pytest.raises(ConfigError, match="unknown key 'depth'"):
        apply_section(RnnSpec(), {"depth": 2}, "rnn")
    with pytest.raises(ConfigError, match="invalid value"):
        apply_section(RnnSpec(), {"window_W": 0}, "rnn")
