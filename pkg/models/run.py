from datetime import date, datetime, time
from enum import Enum
from typing import Dict, List, Literal, Optional
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.chart import VisitKind

DEFAULT_INDICATORS = {
    VisitKind.consult: "🆕",
    VisitKind.new: "🆕",
    VisitKind.follow_up: "🔁",
    VisitKind.simulation: "📐",
    VisitKind.management: "🩺",
    VisitKind.treatment: "⚡",
    VisitKind.other: "📋",
}


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class RegistrySettings(Settings):
    mode: Literal["file", "http"] = "file"
    path: str = "fixtures/registry/trials.json"
    base_url: str = "https://clinicaltrials.gov/api/v2"
    timeout_seconds: float = Field(default=10.0, gt=0)
    max_in_flight: int = Field(default=4, ge=1)
    page_size: int = Field(default=50, ge=1, le=1000)
    result_cap: int = Field(default=200, ge=1)


class TransportSettings(Settings):
    kind: Literal["outbox", "smtp"] = "outbox"
    outbox_root: Optional[str] = None
    smtp_host: str = ""
    smtp_port: int = 465
    from_address: str = ""
    username: str = ""
    password: str = ""
    use_ssl: bool = True
    timeout_seconds: float = Field(default=30.0, gt=0)


class AgentSettings(Settings):
    backend: Literal["rule", "remote"] = "rule"
    max_steps: int = Field(default=40, ge=1)
    max_tool_calls_per_step: int = Field(default=16, ge=1)
    endpoint: str = ""
    model: str = "gpt-4o"
    api_key_env: str = "DAILY_DOSE_API_KEY"
    timeout_seconds: float = Field(default=120.0, gt=0)


class DigestSettings(Settings):
    sender_name: str = "The Daily Dose"
    contact_email: str = "dailydose@example.org"
    feedback_link: str = "https://forms.example.org/daily-dose-feedback"
    indicators: Dict[VisitKind, str] = DEFAULT_INDICATORS

    @field_validator("indicators")
    @classmethod
    def every_kind_has_a_glyph(cls, value):
        merged = dict(DEFAULT_INDICATORS)
        merged.update(value)
        return merged


class RunConfig(Settings):
    cohort_path: str = "fixtures/smoke-3x10"
    institution_name: str = "Mayo Clinic"
    trigger_time: time = time(5, 0)
    timezone: str = "America/Chicago"
    max_retries: int = Field(default=3, ge=0)
    retry_delay_seconds: float = Field(default=0.0, ge=0)
    parallelism: int = Field(default=4, ge=1)
    appointment_parallelism: int = Field(default=4, ge=1)
    output_root: str = "out"
    archive_root: Optional[str] = None
    log_root: Optional[str] = None
    run_date: Optional[date] = None
    log_level: str = "INFO"
    registry: RegistrySettings = RegistrySettings()
    transport: TransportSettings = TransportSettings()
    agent: AgentSettings = AgentSettings()
    digest: DigestSettings = DigestSettings()

    @model_validator(mode="after")
    def known_timezone(self):
        try:
            ZoneInfo(self.timezone)
        except (ZoneInfoNotFoundError, ValueError):
            raise ValueError(f"unknown timezone: {self.timezone}")
        return self


class TaskKind(str, Enum):
    summary = "summary"
    trial = "trial"
    delivery = "delivery"


class TaskOutcome(str, Enum):
    ok = "ok"
    failed = "failed"


class TaskRecord(BaseModel):
    task: TaskKind
    physician_id: str
    patient_id: Optional[str] = None
    appointment_id: Optional[str] = None
    attempts: int = Field(ge=0)
    duration_ms: int = Field(ge=0)
    outcome: TaskOutcome
    detail: str = ""
    error: Optional[str] = None


class PhysicianStatus(str, Enum):
    ok = "ok"
    partial = "partial"
    skipped = "skipped"
    failed = "failed"


class PhysicianOutcome(BaseModel):
    physician_id: str
    status: PhysicianStatus
    appointments: int = 0
    delivery: Optional[str] = None
    archive_path: Optional[str] = None
    error: Optional[str] = None


class RunTotals(BaseModel):
    physicians: int = 0
    digests: int = 0
    appointments: int = 0
    summary_tasks: int = 0
    trial_tasks: int = 0
    errors: int = 0


class RunReport(BaseModel):
    run_id: str
    run_date: date
    started_at: datetime
    finished_at: Optional[datetime] = None
    dry_run: bool = False
    physicians: List[PhysicianOutcome] = []
    tasks: List[TaskRecord] = []
    totals: RunTotals = RunTotals()

    def exit_code(self) -> int:
        return 0 if self.totals.errors == 0 else 1
