from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

NCT_PATTERN = r"^NCT\d{8}$"


class TrialStatus(str, Enum):
    recruiting = "recruiting"
    active_not_recruiting = "active_not_recruiting"
    completed = "completed"
    other = "other"


class TrialSex(str, Enum):
    all = "all"
    female = "female"
    male = "male"


class Polarity(str, Enum):
    inclusion = "inclusion"
    exclusion = "exclusion"


class PredicateKind(str, Enum):
    age_range = "age_range"
    sex = "sex"
    diagnosis_match = "diagnosis_match"
    requires_prior_treatment = "requires_prior_treatment"
    excludes_prior_treatment = "excludes_prior_treatment"
    lab_threshold = "lab_threshold"
    ecog_max = "ecog_max"
    free_text = "free_text"


class Comparator(str, Enum):
    lt = "<"
    le = "<="
    gt = ">"
    ge = ">="


class CriterionPredicate(BaseModel):
    """
    A machine-checkable criterion. Only the parameters of `kind` are read.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PredicateKind
    min_years: Optional[float] = None
    max_years: Optional[float] = None
    sex: Optional[TrialSex] = None
    terms: List[str] = []
    analyte: Optional[str] = None
    comparator: Optional[Comparator] = None
    threshold: Optional[float] = None
    ecog_max: Optional[int] = Field(default=None, ge=0, le=5)
    text: str = ""

    @model_validator(mode="after")
    def check_parameters(self):
        kind = self.kind
        if kind == PredicateKind.sex and self.sex is None:
            raise ValueError("sex predicate needs `sex`")
        if kind in (
            PredicateKind.diagnosis_match,
            PredicateKind.requires_prior_treatment,
            PredicateKind.excludes_prior_treatment,
        ) and not self.terms:
            raise ValueError(f"{kind.value} predicate needs `terms`")
        if kind == PredicateKind.lab_threshold and (
            self.analyte is None or self.comparator is None or self.threshold is None
        ):
            raise ValueError("lab_threshold predicate needs analyte, comparator and threshold")
        if kind == PredicateKind.ecog_max and self.ecog_max is None:
            raise ValueError("ecog_max predicate needs `ecog_max`")
        return self


class Criterion(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    criterion_id: str
    description: str
    polarity: Polarity
    predicate: CriterionPredicate
    disease_site: Optional[str] = None


class TrialRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    nct_id: str = Field(pattern=NCT_PATTERN)
    title: str
    overall_status: TrialStatus
    locations: List[str] = []
    conditions: List[str] = []
    interventions: List[str] = []
    min_age_years: Optional[float] = None
    max_age_years: Optional[float] = None
    sex: TrialSex = TrialSex.all
    criteria: List[Criterion] = []
    url: str = Field(min_length=1)


class TrialQuery(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    condition_terms: List[str]
    intervention_terms: List[str] = []
    age_years: Optional[float] = None
    sex: Optional[TrialSex] = None
    institution: str
    status_filter: TrialStatus = TrialStatus.recruiting

    @field_validator("condition_terms")
    @classmethod
    def at_least_one_condition(cls, value):
        if not [term for term in value if term.strip()]:
            raise ValueError("a trial query needs at least one condition term")
        return value

    @field_validator("status_filter")
    @classmethod
    def recruiting_only(cls, value):
        if value != TrialStatus.recruiting:
            raise ValueError("only recruiting trials can be searched")
        return value
