from datetime import date, datetime
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Sex(str, Enum):
    female = "female"
    male = "male"
    unknown = "unknown"


class VisitKind(str, Enum):
    consult = "consult"
    new = "new"
    follow_up = "follow_up"
    management = "management"
    simulation = "simulation"
    treatment = "treatment"
    other = "other"


TRIAL_ELIGIBLE_KINDS = frozenset({VisitKind.new, VisitKind.consult})


def is_trial_eligible_visit(kind: VisitKind) -> bool:
    return kind in TRIAL_ELIGIBLE_KINDS


class Specialty(str, Enum):
    radiology = "radiology"
    pathology = "pathology"
    surgery = "surgery"
    medonc = "medonc"
    ent = "ENT"
    urology = "urology"
    radonc = "radonc"


# Closed staging vocabularies. Bare T2/T3 are accepted as recorded by some sites.
class TStage(str, Enum):
    T1 = "T1"
    T1a = "T1a"
    T1b = "T1b"
    T1c = "T1c"
    T2 = "T2"
    T2a = "T2a"
    T2b = "T2b"
    T2c = "T2c"
    T3 = "T3"
    T3a = "T3a"
    T3b = "T3b"
    T4 = "T4"


class NStage(str, Enum):
    N0 = "N0"
    N1 = "N1"


class MStage(str, Enum):
    M0 = "M0"
    M1 = "M1"


class Staging(FrozenModel):
    t_stage: TStage
    n_stage: NStage
    m_stage: MStage

    def label(self) -> str:
        return f"{self.t_stage.value} {self.n_stage.value} {self.m_stage.value}"


class ProstateDetail(FrozenModel):
    gleason_primary: int = Field(ge=1, le=5)
    gleason_secondary: int = Field(ge=1, le=5)
    cores_positive: int = Field(ge=0)
    cores_total: int = Field(gt=0)

    @model_validator(mode="after")
    def check_cores(self):
        if self.cores_positive > self.cores_total:
            raise ValueError("cores_positive exceeds cores_total")
        return self

    @property
    def gleason_sum(self) -> int:
        return self.gleason_primary + self.gleason_secondary

    def gleason_label(self) -> str:
        return f"{self.gleason_primary}+{self.gleason_secondary}={self.gleason_sum}"


class DiagnosisDetail(FrozenModel):
    site: str
    onset_date: date
    staging: Optional[Staging] = None
    histology: str = ""
    prostate_detail: Optional[ProstateDetail] = None

    def describe(self) -> str:
        text = f"{self.histology} of the {self.site}" if self.histology else f"{self.site} cancer"
        if self.staging:
            text += f" ({self.staging.label()})"
        return text


class DatedDocument(FrozenModel):
    date: date
    title: str
    text: str = ""


class TreatmentDetail(FrozenModel):
    course: str
    site: str
    modality: str
    start_date: date
    dose_gy_prescribed: Optional[float] = Field(default=None, gt=0)
    dose_gy_delivered: Optional[float] = Field(default=None, ge=0)
    fractions_prescribed: Optional[int] = Field(default=None, gt=0)
    fractions_delivered: Optional[int] = Field(default=None, ge=0)
    last_treatment_date: Optional[date] = None
    next_treatment_date: Optional[date] = None


class MedicationEntry(FrozenModel):
    name: str
    start_date: date
    end_date: Optional[date] = None

    def active_on(self, day: date) -> bool:
        return self.start_date <= day and (self.end_date is None or self.end_date >= day)


class LabResult(FrozenModel):
    analyte: str
    value: float
    unit: str
    date: date

    @model_validator(mode="after")
    def check_psa_unit(self):
        if self.analyte.upper() == "PSA" and self.unit != "ng/mL":
            raise ValueError("PSA results must be recorded in ng/mL")
        return self


class PriorRadiation(FrozenModel):
    dose_gy: float = Field(gt=0)
    year: int
    site: Optional[str] = None


class EligibilityFacts(FrozenModel):
    ecog: Optional[int] = Field(default=None, ge=0, le=5)
    comorbidities: List[str] = []
    biomarkers: Dict[str, str] = {}
    prior_radiation: List[PriorRadiation] = []
    prior_systemic_therapies: List[str] = []

    def is_empty(self) -> bool:
        return (
            self.ecog is None
            and not self.comorbidities
            and not self.biomarkers
            and not self.prior_radiation
            and not self.prior_systemic_therapies
        )


class Appointment(FrozenModel):
    appointment_id: str
    physician_id: str
    patient_id: str
    start_time: datetime
    visit_kind: VisitKind
    raw_type_label: str


class PhysicianProfile(FrozenModel):
    physician_id: str
    name: str
    email: str
    campus: str = ""


def _by_date(items, key):
    return sorted(items, key=key)


class PatientChart(FrozenModel):
    patient_id: str = Field(min_length=1)
    name: str
    date_of_birth: Optional[date] = None
    sex: Sex = Sex.unknown
    diagnoses: List[DiagnosisDetail] = []
    treatments: List[TreatmentDetail] = []
    appointments: List[Appointment] = []
    radiology_reports: List[DatedDocument] = []
    pathology_reports: List[DatedDocument] = []
    notes: Dict[Specialty, List[DatedDocument]] = {}
    medications: List[MedicationEntry] = []
    labs: List[LabResult] = []
    eligibility_facts: EligibilityFacts = EligibilityFacts()

    # Lists are kept date-ascending; the sort is stable so equal dates keep file order.
    @field_validator("radiology_reports", "pathology_reports")
    @classmethod
    def sort_documents(cls, value):
        return _by_date(value, lambda d: d.date)

    @field_validator("notes")
    @classmethod
    def sort_notes(cls, value):
        return {k: _by_date(v, lambda d: d.date) for k, v in value.items()}

    @field_validator("diagnoses")
    @classmethod
    def sort_diagnoses(cls, value):
        return _by_date(value, lambda d: d.onset_date)

    @field_validator("treatments")
    @classmethod
    def sort_treatments(cls, value):
        return _by_date(value, lambda t: t.start_date)

    @field_validator("medications")
    @classmethod
    def sort_medications(cls, value):
        return _by_date(value, lambda m: m.start_date)

    @field_validator("labs")
    @classmethod
    def sort_labs(cls, value):
        return _by_date(value, lambda lab: lab.date)

    @field_validator("appointments")
    @classmethod
    def sort_appointments(cls, value):
        return _by_date(value, lambda a: (a.start_time, a.appointment_id))

    def age_on(self, day: date) -> Optional[int]:
        if self.date_of_birth is None:
            return None
        dob = self.date_of_birth
        return day.year - dob.year - ((day.month, day.day) < (dob.month, dob.day))

    def first_and_last_name(self):
        parts = self.name.split()
        if not parts:
            return "", ""
        return parts[0], " ".join(parts[1:])

    def psa_series(self) -> List[LabResult]:
        return [lab for lab in self.labs if lab.analyte.upper() == "PSA"]
