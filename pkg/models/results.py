from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.trial import NCT_PATTERN

FALLBACK_SUMMARY = "There is not enough information to provide a status report."


class SummaryPayload(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    is_fallback: bool = False

    @model_validator(mode="after")
    def fallback_matches_text(self):
        if self.is_fallback != (self.text == FALLBACK_SUMMARY):
            raise ValueError("is_fallback must be true exactly for the fallback sentence")
        return self

    @classmethod
    def of(cls, text: str) -> "SummaryPayload":
        return cls(text=text, is_fallback=text == FALLBACK_SUMMARY)


class Scenario(str, Enum):
    trials_found = "trials_found"
    none_found = "none_found"
    demographics_missing = "demographics_missing"
    search_error = "search_error"


class TrialEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    nct_id: str = Field(pattern=NCT_PATTERN)
    title: str
    met_summary: str
    unknown_summary: str
    not_applicable_summary: str
    url: str


class AnalysisSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario: Scenario
    entries: List[TrialEntry] = []
    patient_display_name: str = ""

    @model_validator(mode="after")
    def entries_match_scenario(self):
        if bool(self.entries) != (self.scenario == Scenario.trials_found):
            raise ValueError("entries are present exactly when trials were found")
        return self


class CriterionStatus(str, Enum):
    met = "met"
    not_met = "not_met"
    unknown = "unknown"
    not_applicable = "not_applicable"


class CriterionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    criterion_id: str
    status: CriterionStatus
    evidence: str = Field(min_length=1)
    description: Optional[str] = None
