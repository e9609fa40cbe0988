from datetime import date
from typing import Optional
from zoneinfo import ZoneInfo

from fastapi import APIRouter, Query

from models.info import HealthModel, InfoModel, PublicContact, ValidationModel
from util.ehr import validate_cohort
from util.errors import ArchiveConflictError, CohortError, ConfigError, Errors, UnknownPhysicianError
from util.options import Options, log_dir, resolve
from util.orchestrator import run_daily_async
from util.runlog import load_report
from util.scheduler import next_trigger, utc_now

router = APIRouter(prefix="/api", tags=["API"], responses=Errors.basic_http())


"""
Get API information.
"""


@router.get("/")
async def get_root():
    config = Options.run_config()
    return InfoModel(
        description="Daily per-physician digests of patient status summaries and clinical trial shortlists.",
        institution=config.institution_name,
        credits=[PublicContact(name=config.digest.sender_name, email=config.digest.contact_email)],
    )


@router.get("/health")
async def get_health():
    config = Options.run_config()
    return HealthModel(
        timezone=config.timezone,
        next_run=next_trigger(utc_now(), config.trigger_time, ZoneInfo(config.timezone)),
    )


"""
Runs the daily digests now. Same as `ddose.py run`.
"""


@router.post("/run")
async def post_run(
    run_date: Optional[date] = Query(None, alias="date"),
    physician: Optional[str] = None, dry_run: bool = False):
    try:
        config = Options.run_config()
        report = await run_daily_async(config, run_date, physician_id=physician, dry_run=dry_run)
    except UnknownPhysicianError as e:
        return Errors.generate(404, "Unknown physician.", str(e))
    except ArchiveConflictError as e:
        return Errors.generate(409, "Run already archived.", str(e))
    except (CohortError, ConfigError) as e:
        return Errors.generate(422, "Run could not start.", str(e))
    return report


@router.get("/runs/{run_id}")
async def get_run(run_id: str):
    report = load_report(log_dir(Options.run_config()), run_id)
    if report is None:
        return Errors.generate(404, "Run not found.", f"No report stored for run {run_id}.")
    return report


"""
Checks the configured cohort fixtures and lists every problem found.
"""


@router.get("/fixtures/validate")
async def get_fixtures_validate():
    config = Options.run_config()
    findings = validate_cohort(resolve(config.cohort_path))
    return ValidationModel(cohort=config.cohort_path, ok=not findings, findings=findings)
