from datetime import date
from pathlib import Path

import pytest

from models.run import RunConfig
from util.ehr import load_cohort
from util.registry import FileRegistry

ROOT = Path(__file__).resolve().parent.parent
COHORT = ROOT / "fixtures" / "smoke-3x10"
TRIALS = ROOT / "fixtures" / "registry" / "trials.json"
SURVEY = ROOT / "fixtures" / "survey"

RUN_DATE = date(2025, 8, 4)


@pytest.fixture(scope="session")
def store():
    return load_cohort(COHORT)


@pytest.fixture(scope="session")
def registry():
    return FileRegistry(TRIALS)


@pytest.fixture
def run_date():
    return RUN_DATE


@pytest.fixture
def config(tmp_path):
    return RunConfig(
        cohort_path=str(COHORT),
        output_root=str(tmp_path / "out"),
        registry={"path": str(TRIALS)},
    )


@pytest.fixture
def config_file(tmp_path):
    """
    An options.yml pointing at the smoke cohort with all output under tmp_path.
    """
    path = tmp_path / "options.yml"
    path.write_text(
        "daily_dose:\n"
        f"  cohort_path: {COHORT}\n"
        f"  output_root: {tmp_path / 'out'}\n"
        "  registry:\n"
        f"    path: {TRIALS}\n"
        "http:\n"
        "  scheduler: false\n",
        encoding="utf-8",
    )
    return path
