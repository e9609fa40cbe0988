import json
import logging
from collections import defaultdict
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError

from models.chart import Appointment, PatientChart, PhysicianProfile, Specialty
from util.errors import (
    CohortError,
    DanglingReferenceError,
    MalformedDocumentError,
    MissingDirectoryError,
    UnknownPatientError,
    UnknownPhysicianError,
)
from util.visits import classify_visit_kind

logger = logging.getLogger(__name__)


class EhrSection(str, Enum):
    patient_details = "patient_details"
    treatment_details = "treatment_details"
    diagnosis_details = "diagnosis_details"
    appointments_today = "appointments_today"
    radiology_reports = "radiology_reports"
    pathology_reports = "pathology_reports"
    notes_radiology = "notes_radiology"
    notes_pathology = "notes_pathology"
    notes_surgery = "notes_surgery"
    notes_medonc = "notes_medonc"
    notes_ent = "notes_ent"
    notes_urology = "notes_urology"
    notes_radonc = "notes_radonc"
    medications = "medications"
    labs = "labs"


NOTE_SECTIONS = {
    EhrSection.notes_radiology: Specialty.radiology,
    EhrSection.notes_pathology: Specialty.pathology,
    EhrSection.notes_surgery: Specialty.surgery,
    EhrSection.notes_medonc: Specialty.medonc,
    EhrSection.notes_ent: Specialty.ent,
    EhrSection.notes_urology: Specialty.urology,
    EhrSection.notes_radonc: Specialty.radonc,
}


class SectionPayload(BaseModel):
    model_config = ConfigDict(frozen=True)

    section: EhrSection
    patient_id: str
    items: List[Dict[str, Any]] = []
    empty: bool = True
    as_of: Optional[date] = None


class CohortStore(BaseModel):
    """
    Immutable after load. Appointments live in `schedules`; each chart also
    carries its own appointments, copied from the schedules at load time.
    """

    model_config = ConfigDict(frozen=True)

    patients: Dict[str, PatientChart]
    schedules: Dict[Tuple[str, date], List[Appointment]]
    physicians: List[PhysicianProfile]

    def physician(self, physician_id: str) -> PhysicianProfile:
        for profile in self.physicians:
            if profile.physician_id == physician_id:
                return profile
        raise UnknownPhysicianError(physician_id)

    def chart(self, patient_id: str) -> PatientChart:
        try:
            return self.patients[patient_id]
        except KeyError:
            raise UnknownPatientError(patient_id)


def _read_json(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as file:
            return json.load(file)
    except json.JSONDecodeError as e:
        raise MalformedDocumentError(path, e.msg, line=e.lineno)


def _validation_message(e: ValidationError) -> str:
    first = e.errors()[0]
    where = ".".join(str(part) for part in first["loc"])
    return f"{where}: {first['msg']}" if where else first["msg"]


def _documents(directory: Path):
    if not directory.is_dir():
        return []
    return sorted(directory.glob("*.json"))


def _scan(root: Path, findings: List[CohortError]) -> Optional[CohortStore]:
    if not root.is_dir():
        findings.append(MissingDirectoryError(f"cohort directory not found: {root}"))
        return None

    physicians: Dict[str, PhysicianProfile] = {}
    for path in _documents(root / "physicians"):
        try:
            profile = PhysicianProfile.model_validate(_read_json(path))
        except MalformedDocumentError as e:
            findings.append(e)
            continue
        except ValidationError as e:
            findings.append(MalformedDocumentError(path, _validation_message(e)))
            continue
        if profile.physician_id != path.stem:
            findings.append(MalformedDocumentError(path, f"physician_id {profile.physician_id!r} does not match file name"))
            continue
        physicians[profile.physician_id] = profile

    if not physicians and not findings:
        findings.append(CohortError("no physicians defined"))

    charts: Dict[str, dict] = {}
    for path in _documents(root / "patients"):
        try:
            document = _read_json(path)
            PatientChart.model_validate(document)
        except MalformedDocumentError as e:
            findings.append(e)
            continue
        except ValidationError as e:
            findings.append(MalformedDocumentError(path, _validation_message(e)))
            continue
        if document.get("patient_id") != path.stem:
            findings.append(MalformedDocumentError(path, f"patient_id {document.get('patient_id')!r} does not match file name"))
            continue
        charts[path.stem] = document

    schedules: Dict[Tuple[str, date], List[Appointment]] = defaultdict(list)
    for path in _documents(root / "schedules"):
        try:
            document = _read_json(path)
            day = date.fromisoformat(document["date"])
            rows = document.get("appointments", [])
        except MalformedDocumentError as e:
            findings.append(e)
            continue
        except (KeyError, TypeError, ValueError) as e:
            findings.append(MalformedDocumentError(path, f"schedule header invalid: {e}"))
            continue

        for position, row in enumerate(rows):
            try:
                appointment = Appointment(
                    appointment_id=row["appointment_id"],
                    physician_id=row["physician_id"],
                    patient_id=row["patient_id"],
                    start_time=row["start_time"],
                    raw_type_label=row["type"],
                    visit_kind=classify_visit_kind(row["type"]),
                )
            except (KeyError, TypeError, ValueError) as e:
                findings.append(MalformedDocumentError(path, f"appointments[{position}]: {e}"))
                continue

            if appointment.start_time.tzinfo is None:
                findings.append(MalformedDocumentError(path, f"appointments[{position}]: start_time needs a zone offset"))
                continue
            if appointment.start_time.date() != day:
                findings.append(MalformedDocumentError(path, f"appointments[{position}]: start_time is not on {day}"))
                continue
            if appointment.patient_id not in charts:
                findings.append(
                    DanglingReferenceError(
                        f"{path}: appointment {appointment.appointment_id} references unknown patient {appointment.patient_id}"
                    )
                )
                continue
            if appointment.physician_id not in physicians:
                findings.append(
                    DanglingReferenceError(
                        f"{path}: appointment {appointment.appointment_id} references unknown physician {appointment.physician_id}"
                    )
                )
                continue
            schedules[(appointment.physician_id, day)].append(appointment)

    if findings:
        return None

    by_patient: Dict[str, List[Appointment]] = defaultdict(list)
    for appointments in schedules.values():
        for appointment in appointments:
            by_patient[appointment.patient_id].append(appointment)

    patients = {
        patient_id: PatientChart.model_validate({**document, "appointments": by_patient.get(patient_id, [])})
        for patient_id, document in sorted(charts.items())
    }

    return CohortStore(
        patients=patients,
        schedules={key: sorted(value, key=lambda a: (a.start_time, a.appointment_id)) for key, value in sorted(schedules.items())},
        physicians=[physicians[key] for key in sorted(physicians)],
    )


def load_cohort(root_path) -> CohortStore:
    findings: List[CohortError] = []
    store = _scan(Path(root_path), findings)
    if findings:
        raise findings[0]

    logger.info(
        "Loaded cohort %s: %d physicians, %d patients, %d schedules",
        root_path,
        len(store.physicians),
        len(store.patients),
        len(store.schedules),
    )
    return store


def validate_cohort(root_path) -> List[str]:
    """
    Like load_cohort, but reports every finding instead of stopping at the first.
    """
    findings: List[CohortError] = []
    _scan(Path(root_path), findings)
    return [str(finding) for finding in findings]


def dump_cohort(store: CohortStore, root_path) -> Path:
    root = Path(root_path)
    for folder in ("physicians", "patients", "schedules"):
        (root / folder).mkdir(parents=True, exist_ok=True)

    for profile in store.physicians:
        _write_json(root / "physicians" / f"{profile.physician_id}.json", profile.model_dump(mode="json"))

    for patient_id, chart in store.patients.items():
        _write_json(root / "patients" / f"{patient_id}.json", chart.model_dump(mode="json", exclude={"appointments"}))

    by_day: Dict[date, List[Appointment]] = defaultdict(list)
    for (_, day), appointments in store.schedules.items():
        by_day[day].extend(appointments)

    for day, appointments in sorted(by_day.items()):
        rows = [
            {
                "appointment_id": a.appointment_id,
                "physician_id": a.physician_id,
                "patient_id": a.patient_id,
                "start_time": a.start_time.isoformat(),
                "type": a.raw_type_label,
            }
            for a in sorted(appointments, key=lambda a: (a.start_time, a.appointment_id))
        ]
        _write_json(root / "schedules" / f"{day.isoformat()}.json", {"date": day.isoformat(), "appointments": rows})

    return root


def _write_json(path: Path, document):
    with open(path, "w", encoding="utf-8") as file:
        json.dump(document, file, indent=2, ensure_ascii=False)
        file.write("\n")


def _dump(items) -> List[Dict[str, Any]]:
    return [item.model_dump(mode="json") for item in items]


def get_section(store: CohortStore, patient_id: str, section: EhrSection, run_date: Optional[date] = None) -> SectionPayload:
    """
    One chart section as a payload. `appointments_today` is relative to
    `run_date` and refuses to run without one.
    """
    chart = store.chart(patient_id)
    section = EhrSection(section)
    as_of = None

    if section == EhrSection.patient_details:
        items = []
        if chart.date_of_birth is not None or chart.sex.value != "unknown" or not chart.eligibility_facts.is_empty():
            details = {
                "patient_id": chart.patient_id,
                "name": chart.name,
                "date_of_birth": chart.date_of_birth.isoformat() if chart.date_of_birth else None,
                "sex": chart.sex.value,
                "eligibility_facts": chart.eligibility_facts.model_dump(mode="json"),
            }
            if run_date is not None and chart.date_of_birth is not None:
                details["age_years"] = chart.age_on(run_date)
                as_of = run_date
            items = [details]
    elif section == EhrSection.treatment_details:
        items = _dump(chart.treatments)
    elif section == EhrSection.diagnosis_details:
        items = _dump(chart.diagnoses)
    elif section == EhrSection.appointments_today:
        if run_date is None:
            raise ValueError("appointments_today needs a run date")
        as_of = run_date
        todays = [a for a in chart.appointments if a.start_time.date() == run_date]
        items = _dump(todays)
    elif section == EhrSection.radiology_reports:
        items = _dump(chart.radiology_reports)
    elif section == EhrSection.pathology_reports:
        items = _dump(chart.pathology_reports)
    elif section in NOTE_SECTIONS:
        items = _dump(chart.notes.get(NOTE_SECTIONS[section], []))
    elif section == EhrSection.medications:
        items = _dump(chart.medications)
    else:
        items = _dump(chart.labs)

    return SectionPayload(section=section, patient_id=patient_id, items=items, empty=not items, as_of=as_of)


def get_schedule(store: CohortStore, physician_id: str, day: date) -> List[Appointment]:
    store.physician(physician_id)
    return list(store.schedules.get((physician_id, day), []))


def list_physicians(store: CohortStore, day: Optional[date] = None) -> List[str]:
    return sorted(profile.physician_id for profile in store.physicians)
