from datetime import date
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from models.results import CriterionReport
from models.trial import TrialRecord


class EventCategory(str, Enum):
    diagnostic = "diagnostic"
    lab = "lab"
    staging = "staging"
    performance = "performance"
    symptom = "symptom"
    comorbidity = "comorbidity"
    biomarker = "biomarker"
    simulation = "simulation"
    surgery = "surgery"
    planning = "planning"
    treatment = "treatment"
    other = "other"


CATEGORY_ORDER = {category: position for position, category in enumerate(EventCategory)}


class TimelineEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    date: date
    category: EventCategory
    description: str

    def sort_key(self):
        return (self.date, CATEGORY_ORDER[self.category], self.description)


class Timeline(BaseModel):
    model_config = ConfigDict(frozen=True)

    events: List[TimelineEvent] = []

    @field_validator("events")
    @classmethod
    def ascending(cls, value):
        return sorted(value, key=TimelineEvent.sort_key)

    def to_markdown(self) -> str:
        lines = ["| Date | Category | Event |", "|---|---|---|"]
        for event in self.events:
            description = event.description.replace("|", "/")
            lines.append(f"| {event.date.isoformat()} | {event.category.value} | {description} |")
        return "\n".join(lines)


class RankedKeywords(BaseModel):
    model_config = ConfigDict(frozen=True)

    conditions: List[Tuple[str, int]] = []
    interventions: List[Tuple[str, int]] = []

    @field_validator("conditions", "interventions")
    @classmethod
    def contiguous_ranks(cls, value):
        terms = [term for term, _ in value]
        if len(set(terms)) != len(terms):
            raise ValueError("keywords must be unique")
        if any(term != term.lower() for term in terms):
            raise ValueError("keywords must be lowercase")
        if [rank for _, rank in value] != list(range(1, len(value) + 1)):
            raise ValueError("ranks must run 1..n")
        return value

    def condition_terms(self) -> List[str]:
        return [term for term, _ in self.conditions]

    def intervention_terms(self) -> List[str]:
        return [term for term, _ in self.interventions]


class CombinationQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    condition_terms: List[str] = Field(min_length=1)
    intervention_terms: List[str] = []
    rank: int = Field(ge=1)

    def label(self) -> str:
        conditions = " OR ".join(self.condition_terms)
        if not self.intervention_terms:
            return f"({conditions})"
        return f"({conditions}) AND ({' OR '.join(self.intervention_terms)})"


class SearchCount(BaseModel):
    model_config = ConfigDict(frozen=True)

    new_unique: int
    cumulative: int


class TrialPool(BaseModel):
    model_config = ConfigDict(frozen=True)

    trials: List[TrialRecord] = []
    searches_performed: int = 0
    per_search_counts: List[SearchCount] = []

    @field_validator("trials")
    @classmethod
    def no_duplicates(cls, value):
        ids = [trial.nct_id for trial in value]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate trial in pool")
        return value

    def nct_ids(self) -> List[str]:
        return [trial.nct_id for trial in self.trials]


class DemographicsMissing(BaseModel):
    model_config = ConfigDict(frozen=True)

    missing: List[str]


class SearchFailed(BaseModel):
    model_config = ConfigDict(frozen=True)

    error: str
    searches_performed: int = 0


class ShortlistItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    trial: TrialRecord
    reports: List[CriterionReport]

    def summaries(self) -> Dict[str, str]:
        return {
            status: "; ".join(
                f"{report.description or report.criterion_id} ({report.evidence})"
                for report in self.reports
                if report.status.value == status
            )
            or "None"
            for status in ("met", "unknown", "not_applicable")
        }


class Demographics(BaseModel):
    model_config = ConfigDict(frozen=True)

    age_years: Optional[int] = None
    sex: Optional[str] = None

    def missing(self) -> List[str]:
        gaps = []
        if self.age_years is None:
            gaps.append("age")
        if self.sex in (None, "unknown"):
            gaps.append("sex")
        return gaps
