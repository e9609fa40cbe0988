import asyncio
import json
import logging
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Awaitable, Callable, Optional
from zoneinfo import ZoneInfo

from models.run import RunConfig, RunReport
from util.options import log_dir
from util.orchestrator import run_daily_async

logger = logging.getLogger(__name__)

Clock = Callable[[], datetime]
Sleeper = Callable[[float], Awaitable[None]]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def next_trigger(now: datetime, trigger_time: time, zone: ZoneInfo) -> datetime:
    """
    The next instant at which the local wall clock reads `trigger_time`,
    strictly after `now`. Returned in UTC.
    """
    local = now.astimezone(zone)
    candidate = datetime.combine(local.date(), trigger_time, tzinfo=zone)
    if candidate.astimezone(timezone.utc) <= now.astimezone(timezone.utc):
        candidate = datetime.combine(local.date() + timedelta(days=1), trigger_time, tzinfo=zone)
    return candidate.astimezone(timezone.utc)


def _marker_path(config: RunConfig) -> Path:
    return log_dir(config) / "last_run.json"


def read_last_run(config: RunConfig) -> Optional[date]:
    path = _marker_path(config)
    if not path.exists():
        return None
    try:
        return date.fromisoformat(json.loads(path.read_text(encoding="utf-8"))["run_date"])
    except (ValueError, KeyError) as e:
        logger.warning("Ignoring unreadable run marker %s: %s", path, e)
        return None


def write_last_run(config: RunConfig, report: RunReport):
    path = _marker_path(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"run_date": report.run_date.isoformat(), "run_id": report.run_id}), encoding="utf-8")


def missed_days(last_run: Optional[date], now: datetime, trigger_time: time, zone: ZoneInfo) -> list:
    """
    Days whose trigger passed while nothing was running. They are logged,
    never back-filled.
    """
    if last_run is None:
        return []
    local = now.astimezone(zone)
    latest_due = local.date() if local.time() >= trigger_time else local.date() - timedelta(days=1)
    days = []
    day = last_run + timedelta(days=1)
    while day <= latest_due:
        days.append(day)
        day += timedelta(days=1)
    return days


async def schedule_loop(
    config: RunConfig,
    clock: Clock = utc_now,
    sleeper: Sleeper = asyncio.sleep,
    runner: Callable[..., Awaitable[RunReport]] = run_daily_async,
    max_runs: Optional[int] = None,
) -> list:
    """
    Sleeps until the next local trigger time and runs the day's digests.
    Runs forever unless `max_runs` is given; returns the reports produced.
    """
    zone = ZoneInfo(config.timezone)
    missed = missed_days(read_last_run(config), clock(), config.trigger_time, zone)
    if missed:
        logger.warning("Missed %d scheduled runs (%s to %s); not back-filling", len(missed), missed[0], missed[-1])

    reports = []
    fired = 0
    while max_runs is None or fired < max_runs:
        now = clock()
        fire_at = next_trigger(now, config.trigger_time, zone)
        delay = (fire_at - now.astimezone(timezone.utc)).total_seconds()
        logger.info("Next digest run at %s (in %.0f s)", fire_at.astimezone(zone).isoformat(), delay)
        await sleeper(delay)

        run_date = fire_at.astimezone(zone).date()
        fired += 1
        try:
            report = await runner(config, run_date)
        except Exception:
            logger.exception("Scheduled run for %s failed", run_date)
            continue
        write_last_run(config, report)
        reports.append(report)
    return reports
