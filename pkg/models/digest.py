from datetime import date, datetime
from enum import Enum
from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict, model_validator

from models.chart import Appointment, PhysicianProfile, is_trial_eligible_visit
from models.results import AnalysisSummary, SummaryPayload

SUMMARY_PLACEHOLDER = "A summary could not be generated for this patient."
TRIALS_PLACEHOLDER = "Clinical trial matching could not be completed for this patient."


class Placeholder(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    error: str = ""


class DigestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    appointment: Appointment
    patient_name: str
    indicator: str
    summary: Union[SummaryPayload, Placeholder]
    trials: Union[AnalysisSummary, Placeholder, None] = None
    trials_markdown: Optional[str] = None

    @model_validator(mode="after")
    def trials_only_for_new_visits(self):
        if self.trials is not None and not is_trial_eligible_visit(self.appointment.visit_kind):
            raise ValueError("trials are only attached to new and consult visits")
        return self


class DigestDocument(BaseModel):
    model_config = ConfigDict(frozen=True)

    physician: PhysicianProfile
    run_date: date
    greeting: str
    entries: List[DigestEntry]
    closing: str
    markdown_source: str
    html_rendered: str

    @model_validator(mode="after")
    def ordered_entries(self):
        if not self.entries:
            raise ValueError("a digest needs at least one entry")
        times = [entry.appointment.start_time for entry in self.entries]
        if times != sorted(times):
            raise ValueError("entries must be ordered by start time")
        return self

    def subject(self) -> str:
        return f"The Daily Dose for {self.physician.name}, {self.run_date.isoformat()}"


class DeliveryStatus(str, Enum):
    delivered = "delivered"
    duplicate = "duplicate"
    skipped = "skipped"
    failed = "failed"


class DeliveryReceipt(BaseModel):
    model_config = ConfigDict(frozen=True)

    physician_id: str
    run_date: date
    transport: str
    status: DeliveryStatus
    content_hash: str
    timestamp: datetime
    location: Optional[str] = None
    detail: str = ""


class ArchiveRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    run_id: str
    physician_id: str
    run_date: date
    path: str
    content_hash: str
    dry_run: bool = False
    delivery: Optional[DeliveryStatus] = None
