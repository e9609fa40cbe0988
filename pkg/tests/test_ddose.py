import pytest

from conftest import COHORT, SURVEY
from ddose import main


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.delenv("DAILY_DOSE_CONFIG", raising=False)


def test_dry_run(config_file, tmp_path, capsys):
    code = main(["--config", str(config_file), "run", "--date", "2025-08-04", "--dry-run"])

    out = capsys.readouterr().out
    assert code == 0
    assert "dr-A: ok, 4 appointments" in out
    assert "3 digests, 0 errors" in out
    assert not (tmp_path / "out" / "outbox").exists()


def test_run_overrides(config_file, tmp_path, capsys):
    code = main(
        [
            "--config",
            str(config_file),
            "run",
            "--date",
            "2025-08-04",
            "--physician",
            "dr-C",
            "--output-root",
            str(tmp_path / "elsewhere"),
        ]
    )

    assert code == 0
    assert (tmp_path / "elsewhere" / "outbox" / "2025-08-04" / "dr-C.md").exists()
    assert "delivery delivered" in capsys.readouterr().out


def test_unknown_physician_fails(config_file, capsys):
    assert main(["--config", str(config_file), "run", "--date", "2025-08-04", "--physician", "dr-Z"]) == 1
    assert "dr-Z" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["--config", str(tmp_path / "nope.yml"), "run"]) == 1


@pytest.mark.parametrize(
    "argv",
    [["run", "--frobnicate"], ["run", "--date", "04/08/2025"], [], ["fixtures"]],
)
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as caught:
        main(argv)
    assert caught.value.code == 2


def test_fixtures_validate(capsys):
    assert main(["fixtures", "validate", str(COHORT)]) == 0
    assert capsys.readouterr().out.strip().endswith(": ok")


def test_fixtures_validate_reports_problems(tmp_path, capsys):
    broken = tmp_path / "cohort"
    (broken / "patients").mkdir(parents=True)
    (broken / "patients" / "P001.json").write_text("{", encoding="utf-8")

    assert main(["fixtures", "validate", str(broken)]) == 1
    assert "problem(s)" in capsys.readouterr().err


def test_survey_published(capsys):
    assert main(["survey", "analyze", "--published"]) == 0
    assert "415.0 minutes" in capsys.readouterr().out


def test_survey_sample(capsys):
    assert main(["survey", "analyze", str(SURVEY / "sample.csv")]) == 0
    assert "Total perceived time saved: 102.5 minutes" in capsys.readouterr().out
