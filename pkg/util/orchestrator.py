import asyncio
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Callable, List, NamedTuple, Optional, Tuple, TypeVar
from zoneinfo import ZoneInfo

from models.agent import AgentTranscript, BackendLimits, TemplateId, ToolCall
from models.chart import Appointment, PhysicianProfile, is_trial_eligible_visit
from models.digest import DeliveryReceipt, DigestEntry
from models.results import AnalysisSummary, SummaryPayload
from models.run import (
    PhysicianOutcome,
    PhysicianStatus,
    RunConfig,
    RunReport,
    RunTotals,
    TaskKind,
    TaskOutcome,
    TaskRecord,
)
from util.agent import AgentBackend, ToolRegistry, render_prompt, run_agent
from util.archive import Archive, build_archive
from util.digest import build_digest, make_entry, summary_placeholder, trials_placeholder
from util.ehr import CohortStore, get_schedule, load_cohort
from util.email import DeliveryLedger, Transport, build_ledger, build_transport, deliver
from util.errors import AgentError, DeliveryError, RetryExhaustedError
from util.options import log_dir, resolve
from util.parsing import extract_analysis_summary, extract_json_summary
from util.registry import TrialRegistry, build_registry
from util.remote_backend import RemoteBackend
from util.rule_backend import RuleBackend
from util.runlog import RunLog

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Fault seam: called before every task attempt; raising fails the attempt.
TaskHook = Callable[[TaskKind, Appointment, int], None]


class RetryResult(NamedTuple):
    value: object
    attempts: int


def with_retry(
    task: Callable[[int], T],
    max_retries: int = 3,
    delay_seconds: float = 0.0,
    on_attempt: Optional[Callable[[int, Optional[BaseException], int], None]] = None,
    retry_if: Callable[[BaseException], bool] = lambda e: True,
) -> RetryResult:
    """
    Runs `task(attempt)` once plus up to `max_retries` more times. The first
    success wins; exhaustion raises RetryExhaustedError with the last error.
    """
    last_error: Optional[BaseException] = None
    attempt = 0
    for attempt in range(1, max_retries + 2):
        started = time.perf_counter()
        try:
            value = task(attempt)
        except Exception as e:
            last_error = e
            if on_attempt:
                on_attempt(attempt, e, int((time.perf_counter() - started) * 1000))
            if not retry_if(e):
                break
            if attempt <= max_retries and delay_seconds:
                time.sleep(delay_seconds)
            continue
        if on_attempt:
            on_attempt(attempt, None, int((time.perf_counter() - started) * 1000))
        return RetryResult(value=value, attempts=attempt)
    raise RetryExhaustedError(attempt, last_error)


class ConcurrencyGauge:
    """
    Counts concurrent holders and remembers the peak.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def __enter__(self):
        with self._lock:
            self.current += 1
            self.peak = max(self.peak, self.current)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self.current -= 1
        return False


@dataclass
class RunContext:
    config: RunConfig
    run_id: str
    run_date: date
    store: CohortStore
    tools: ToolRegistry
    backend: AgentBackend
    run_log: RunLog
    transport: Transport
    ledger: DeliveryLedger
    archive: Archive
    dry_run: bool = False
    task_hook: Optional[TaskHook] = None
    physician_gauge: ConcurrencyGauge = field(default_factory=ConcurrencyGauge)
    appointment_gauge: ConcurrencyGauge = field(default_factory=ConcurrencyGauge)

    @property
    def limits(self) -> BackendLimits:
        return BackendLimits(
            max_steps=self.config.agent.max_steps,
            max_tool_calls_per_step=self.config.agent.max_tool_calls_per_step,
        )


def build_backend(config: RunConfig, tools: ToolRegistry) -> AgentBackend:
    if config.agent.backend == "remote":
        return RemoteBackend(config.agent, tools.schemas())
    return RuleBackend(institution=config.institution_name)


def new_run_id(run_date: date) -> str:
    return f"{run_date:%Y%m%d}-{uuid.uuid4().hex[:8]}"


def local_today(config: RunConfig) -> date:
    return datetime.now(ZoneInfo(config.timezone)).date()


def _patient_name(ctx: RunContext, patient_id: str) -> str:
    chart = ctx.store.patients.get(patient_id)
    return chart.name if chart else patient_id


def _run_task(ctx: RunContext, kind: TaskKind, appointment: Appointment, work: Callable[[int], T]) -> Tuple[Optional[T], TaskRecord]:
    physician_id, patient_id = appointment.physician_id, appointment.patient_id

    def on_attempt(attempt: int, error: Optional[BaseException], duration_ms: int):
        ctx.run_log.event(
            "attempt",
            physician_id=physician_id,
            patient_id=patient_id,
            task=kind.value,
            attempt=attempt,
            duration_ms=duration_ms,
            outcome=TaskOutcome.failed.value if error else TaskOutcome.ok.value,
            error=str(error) if error else None,
        )

    def attempt_once(attempt: int) -> T:
        if ctx.task_hook is not None:
            ctx.task_hook(kind, appointment, attempt)
        return work(attempt)

    started = time.perf_counter()
    try:
        result = with_retry(attempt_once, ctx.config.max_retries, ctx.config.retry_delay_seconds, on_attempt)
    except RetryExhaustedError as e:
        logger.warning("%s task for %s failed after %d attempts: %s", kind.value, patient_id, e.attempts, e.last_error)
        return None, TaskRecord(
            task=kind,
            physician_id=physician_id,
            patient_id=patient_id,
            appointment_id=appointment.appointment_id,
            attempts=e.attempts,
            duration_ms=int((time.perf_counter() - started) * 1000),
            outcome=TaskOutcome.failed,
            error=str(e.last_error),
        )

    value = result.value
    if isinstance(value, SummaryPayload):
        detail = "fallback" if value.is_fallback else "summary"
    elif isinstance(value, AnalysisSummary):
        detail = value.scenario.value
    else:
        detail = ""
    return value, TaskRecord(
        task=kind,
        physician_id=physician_id,
        patient_id=patient_id,
        appointment_id=appointment.appointment_id,
        attempts=result.attempts,
        duration_ms=int((time.perf_counter() - started) * 1000),
        outcome=TaskOutcome.ok,
        detail=detail,
    )


def _agent_run(ctx: RunContext, template: TemplateId, kind: TaskKind, appointment: Appointment, attempt: int) -> AgentTranscript:
    ctx.store.chart(appointment.patient_id)
    prompt = render_prompt(
        template,
        {
            "patient id": appointment.patient_id,
            "patient name": _patient_name(ctx, appointment.patient_id),
            "appointment id": appointment.appointment_id,
        },
    )
    transcript = run_agent(prompt, ctx.backend, ctx.tools, ctx.limits)
    ctx.run_log.event(
        "transcript",
        physician_id=appointment.physician_id,
        patient_id=appointment.patient_id,
        task=kind.value,
        attempt=attempt,
        outcome="aborted" if transcript.aborted else "done",
        error=transcript.abort_reason,
        transcript=transcript,
    )
    if transcript.aborted:
        raise AgentError(transcript.abort_reason or "agent run aborted")
    return transcript


def summary_task(ctx: RunContext, appointment: Appointment, attempt: int = 1) -> SummaryPayload:
    transcript = _agent_run(ctx, TemplateId.clinical_summary, TaskKind.summary, appointment, attempt)
    return extract_json_summary(transcript.final_message())


def trial_task(ctx: RunContext, appointment: Appointment, attempt: int = 1) -> AnalysisSummary:
    transcript = _agent_run(ctx, TemplateId.trial_evaluation, TaskKind.trial, appointment, attempt)
    return extract_analysis_summary(transcript.final_message())


def appointment_job(ctx: RunContext, appointment: Appointment) -> Tuple[DigestEntry, List[TaskRecord]]:
    with ctx.appointment_gauge:
        summary, summary_record = _run_task(ctx, TaskKind.summary, appointment, lambda n: summary_task(ctx, appointment, n))
        records = [summary_record]
        trials = None
        if is_trial_eligible_visit(appointment.visit_kind):
            result, trial_record = _run_task(ctx, TaskKind.trial, appointment, lambda n: trial_task(ctx, appointment, n))
            records.append(trial_record)
            trials = result if result is not None else trials_placeholder(trial_record.error)

    if summary is None:
        summary = summary_placeholder(summary_record.error)
    entry = make_entry(appointment, _patient_name(ctx, appointment.patient_id), summary, trials, ctx.config.digest)
    return entry, records


def _deliver(ctx: RunContext, digest) -> Tuple[Optional[DeliveryReceipt], TaskRecord]:
    physician_id = digest.physician.physician_id

    def on_attempt(attempt: int, error: Optional[BaseException], duration_ms: int):
        ctx.run_log.event(
            "attempt",
            physician_id=physician_id,
            task=TaskKind.delivery.value,
            attempt=attempt,
            duration_ms=duration_ms,
            outcome=TaskOutcome.failed.value if error else TaskOutcome.ok.value,
            error=str(error) if error else None,
        )

    started = time.perf_counter()
    try:
        result = with_retry(
            lambda attempt: deliver(digest, ctx.transport, ctx.ledger),
            ctx.config.max_retries,
            ctx.config.retry_delay_seconds,
            on_attempt,
            retry_if=lambda e: not isinstance(e, DeliveryError) or e.retryable,
        )
    except RetryExhaustedError as e:
        return None, TaskRecord(
            task=TaskKind.delivery,
            physician_id=physician_id,
            attempts=e.attempts,
            duration_ms=int((time.perf_counter() - started) * 1000),
            outcome=TaskOutcome.failed,
            error=str(e.last_error),
        )
    receipt: DeliveryReceipt = result.value
    return receipt, TaskRecord(
        task=TaskKind.delivery,
        physician_id=physician_id,
        attempts=result.attempts,
        duration_ms=int((time.perf_counter() - started) * 1000),
        outcome=TaskOutcome.ok,
        detail=receipt.status.value,
    )


async def physician_job(ctx: RunContext, physician: PhysicianProfile) -> Tuple[PhysicianOutcome, List[TaskRecord]]:
    physician_id = physician.physician_id
    appointments = get_schedule(ctx.store, physician_id, ctx.run_date)
    if not appointments:
        logger.info("No appointments for %s on %s; no digest sent", physician_id, ctx.run_date)
        ctx.run_log.event("physician", physician_id=physician_id, outcome=PhysicianStatus.skipped.value)
        return PhysicianOutcome(physician_id=physician_id, status=PhysicianStatus.skipped), []

    semaphore = asyncio.BoundedSemaphore(ctx.config.appointment_parallelism)

    async def bounded(appointment: Appointment):
        async with semaphore:
            return await asyncio.to_thread(appointment_job, ctx, appointment)

    # The digest waits for every appointment.
    results = await asyncio.gather(*(bounded(appointment) for appointment in appointments))
    entries = [entry for entry, _ in results]
    records = [record for _, task_records in results for record in task_records]

    digest = build_digest(physician, ctx.run_date, entries, ctx.config.digest)
    receipt = None
    if not ctx.dry_run:
        receipt, delivery_record = await asyncio.to_thread(_deliver, ctx, digest)
        records.append(delivery_record)
    archived = await asyncio.to_thread(ctx.archive.store, digest, ctx.run_id, ctx.dry_run, receipt)

    failed = [r for r in records if r.outcome == TaskOutcome.failed]
    if any(r.task == TaskKind.delivery for r in failed):
        status = PhysicianStatus.failed
    elif failed:
        status = PhysicianStatus.partial
    else:
        status = PhysicianStatus.ok

    ctx.run_log.event("physician", physician_id=physician_id, outcome=status.value)
    return (
        PhysicianOutcome(
            physician_id=physician_id,
            status=status,
            appointments=len(appointments),
            delivery=receipt.status.value if receipt else ("dry_run" if ctx.dry_run else "failed"),
            archive_path=archived.path,
        ),
        records,
    )


def _totals(outcomes: List[PhysicianOutcome], records: List[TaskRecord]) -> RunTotals:
    return RunTotals(
        physicians=len(outcomes),
        digests=sum(1 for o in outcomes if o.archive_path),
        appointments=sum(o.appointments for o in outcomes),
        summary_tasks=sum(1 for r in records if r.task == TaskKind.summary),
        trial_tasks=sum(1 for r in records if r.task == TaskKind.trial),
        errors=sum(1 for r in records if r.outcome == TaskOutcome.failed)
        + sum(1 for o in outcomes if o.status == PhysicianStatus.failed and o.error),
    )


async def run_daily_async(
    config: RunConfig,
    run_date: Optional[date] = None,
    physician_id: Optional[str] = None,
    dry_run: bool = False,
    store: Optional[CohortStore] = None,
    registry: Optional[TrialRegistry] = None,
    backend: Optional[AgentBackend] = None,
    transport: Optional[Transport] = None,
    task_hook: Optional[TaskHook] = None,
    tool_hook: Optional[Callable[[ToolCall], None]] = None,
    physician_gauge: Optional[ConcurrencyGauge] = None,
    run_id: Optional[str] = None,
) -> RunReport:
    run_date = run_date or config.run_date or local_today(config)
    run_id = run_id or new_run_id(run_date)
    started_at = datetime.now(timezone.utc)

    # A cohort that will not load fails the whole run.
    store = store or load_cohort(resolve(config.cohort_path))
    registry = registry or build_registry(config.registry)
    tools = ToolRegistry(store, registry, run_date, config.institution_name, before_call=tool_hook)
    ctx = RunContext(
        config=config,
        run_id=run_id,
        run_date=run_date,
        store=store,
        tools=tools,
        backend=backend or build_backend(config, tools),
        run_log=RunLog(log_dir(config), run_id),
        transport=transport or build_transport(config),
        ledger=build_ledger(config),
        archive=build_archive(config),
        dry_run=dry_run,
        task_hook=task_hook,
        physician_gauge=physician_gauge or ConcurrencyGauge(),
    )

    physicians = [store.physician(physician_id)] if physician_id else sorted(store.physicians, key=lambda p: p.physician_id)
    ctx.run_log.event("run", outcome="started")
    logger.info("Run %s for %s: %d physicians%s", run_id, run_date, len(physicians), " (dry run)" if dry_run else "")

    semaphore = asyncio.BoundedSemaphore(config.parallelism)

    async def bounded(physician: PhysicianProfile):
        async with semaphore:
            with ctx.physician_gauge:
                try:
                    return await physician_job(ctx, physician)
                except Exception as e:
                    logger.exception("Digest for %s failed", physician.physician_id)
                    ctx.run_log.event(
                        "physician",
                        physician_id=physician.physician_id,
                        outcome=PhysicianStatus.failed.value,
                        error=str(e),
                    )
                    return PhysicianOutcome(physician_id=physician.physician_id, status=PhysicianStatus.failed, error=str(e)), []

    results = await asyncio.gather(*(bounded(physician) for physician in physicians))
    outcomes = [outcome for outcome, _ in results]
    records = [record for _, task_records in results for record in task_records]

    report = RunReport(
        run_id=run_id,
        run_date=run_date,
        started_at=started_at,
        finished_at=datetime.now(timezone.utc),
        dry_run=dry_run,
        physicians=outcomes,
        tasks=records,
        totals=_totals(outcomes, records),
    )
    ctx.run_log.event("run", outcome="finished", error=f"{report.totals.errors} errors" if report.totals.errors else None)
    ctx.run_log.save_report(report)
    logger.info(
        "Run %s finished: %d digests, %d appointments, %d errors",
        run_id,
        report.totals.digests,
        report.totals.appointments,
        report.totals.errors,
    )
    return report


def run_daily(config: RunConfig, run_date: Optional[date] = None, **kwargs) -> RunReport:
    return asyncio.run(run_daily_async(config, run_date, **kwargs))
