import asyncio
from datetime import date, datetime, time, timedelta, timezone
from zoneinfo import ZoneInfo

import pytest

from models.run import RunReport
from util.scheduler import missed_days, next_trigger, read_last_run, schedule_loop, write_last_run

CHICAGO = ZoneInfo("America/Chicago")
FIVE = time(5, 0)


def utc(*args):
    return datetime(*args, tzinfo=timezone.utc)


@pytest.mark.parametrize(
    "now,expected",
    [
        # summer, UTC-5
        (utc(2025, 8, 4, 9, 0), utc(2025, 8, 4, 10, 0)),
        (utc(2025, 8, 4, 10, 0), utc(2025, 8, 5, 10, 0)),
        # clocks go forward at 02:00 on 2025-03-09
        (utc(2025, 3, 9, 6, 0), utc(2025, 3, 9, 10, 0)),
        (utc(2025, 3, 8, 12, 0), utc(2025, 3, 9, 10, 0)),
        # clocks go back at 02:00 on 2025-11-02
        (utc(2025, 11, 2, 6, 0), utc(2025, 11, 2, 11, 0)),
        (utc(2025, 11, 1, 12, 0), utc(2025, 11, 2, 11, 0)),
    ],
)
def test_next_trigger(now, expected):
    fire_at = next_trigger(now, FIVE, CHICAGO)

    assert fire_at == expected
    assert fire_at > now
    assert fire_at.astimezone(CHICAGO).time() == FIVE


def test_next_trigger_accepts_local_times():
    now = datetime(2025, 8, 4, 4, 59, tzinfo=CHICAGO)
    assert next_trigger(now, FIVE, CHICAGO) == utc(2025, 8, 4, 10, 0)


@pytest.mark.parametrize(
    "last_run,now,expected",
    [
        (None, utc(2025, 8, 4, 12, 0), []),
        (date(2025, 8, 4), utc(2025, 8, 4, 12, 0), []),
        (date(2025, 8, 1), utc(2025, 8, 4, 12, 0), [date(2025, 8, 2), date(2025, 8, 3), date(2025, 8, 4)]),
        # 04:00 local, today's trigger has not passed yet
        (date(2025, 8, 1), utc(2025, 8, 4, 9, 0), [date(2025, 8, 2), date(2025, 8, 3)]),
    ],
)
def test_missed_days(last_run, now, expected):
    assert missed_days(last_run, now, FIVE, CHICAGO) == expected


def report_for(run_date):
    return RunReport(run_id=f"{run_date:%Y%m%d}-test", run_date=run_date, started_at=utc(2025, 8, 4, 10, 0))


def test_last_run_marker(config):
    assert read_last_run(config) is None

    write_last_run(config, report_for(date(2025, 8, 4)))

    assert read_last_run(config) == date(2025, 8, 4)


class FakeClock:
    def __init__(self, now):
        self.now = now
        self.sleeps = []

    def __call__(self):
        return self.now

    async def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += timedelta(seconds=seconds)


def test_loop_fires_once_per_day(config):
    clock = FakeClock(utc(2025, 8, 4, 12, 0))
    dates = []

    async def runner(run_config, run_date):
        dates.append(run_date)
        return report_for(run_date)

    reports = asyncio.run(schedule_loop(config, clock=clock, sleeper=clock.sleep, runner=runner, max_runs=2))

    assert dates == [date(2025, 8, 5), date(2025, 8, 6)]
    assert clock.sleeps == [22 * 3600, 24 * 3600]
    assert [r.run_date for r in reports] == dates
    assert read_last_run(config) == date(2025, 8, 6)


def test_loop_survives_a_failed_run(config):
    clock = FakeClock(utc(2025, 8, 4, 12, 0))

    async def runner(run_config, run_date):
        if run_date == date(2025, 8, 5):
            raise RuntimeError("registry down")
        return report_for(run_date)

    reports = asyncio.run(schedule_loop(config, clock=clock, sleeper=clock.sleep, runner=runner, max_runs=2))

    assert [r.run_date for r in reports] == [date(2025, 8, 6)]
