import pytest

from util.errors import ConfigError
from util.options import Options, resolve


def test_lexicon_is_read():
    rules = Options.get_lexicon("visit_kinds")["rules"]
    assert rules[0] == {"keyword": "consult", "kind": "consult"}


def test_missing_lexicon_is_empty():
    assert Options.get_lexicon("no_such_lexicon") == {}


def test_relative_paths_resolve_against_the_project_root():
    assert resolve("lexicon/synonyms.json").is_absolute()
    assert resolve("/tmp/x").as_posix() == "/tmp/x"


def test_config_from_the_environment(monkeypatch, config_file, tmp_path):
    monkeypatch.setenv("DAILY_DOSE_CONFIG", str(config_file))

    config = Options.run_config()

    assert config.output_root == str(tmp_path / "out")


def test_missing_config_file(monkeypatch, tmp_path):
    monkeypatch.setenv("DAILY_DOSE_CONFIG", str(tmp_path / "nope.yml"))

    with pytest.raises(ConfigError):
        Options.run_config()
