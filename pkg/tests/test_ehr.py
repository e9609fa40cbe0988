import json
import shutil
from datetime import date

import pytest

from conftest import COHORT
from util.ehr import (
    EhrSection,
    dump_cohort,
    get_schedule,
    get_section,
    list_physicians,
    load_cohort,
    validate_cohort,
)
from util.errors import (
    DanglingReferenceError,
    MalformedDocumentError,
    MissingDirectoryError,
    UnknownPatientError,
    UnknownPhysicianError,
)


@pytest.fixture
def cohort_copy(tmp_path):
    return shutil.copytree(COHORT, tmp_path / "cohort")


def edit_json(path, change):
    document = json.loads(path.read_text(encoding="utf-8"))
    change(document)
    path.write_text(json.dumps(document), encoding="utf-8")


def test_smoke_cohort_loads(store):
    assert list_physicians(store) == ["dr-A", "dr-B", "dr-C"]
    assert len(store.patients) == 10
    assert validate_cohort(COHORT) == []


def test_schedule_is_time_ordered(store, run_date):
    schedule = get_schedule(store, "dr-A", run_date)

    assert [a.appointment_id for a in schedule] == ["A001", "A002", "A003", "A004"]
    assert [a.visit_kind.value for a in schedule] == ["consult", "follow_up", "follow_up", "simulation"]


def test_schedule_orders_by_start_not_file_order(store, run_date):
    # dr-B's treatment at 10:00 is listed after the 11:00 visit in the file
    schedule = get_schedule(store, "dr-B", run_date)
    assert [a.start_time.hour for a in schedule] == [8, 10, 11]


def test_schedule_for_an_empty_day(store):
    assert get_schedule(store, "dr-A", date(2025, 8, 5)) == []


def test_unknown_ids(store, run_date):
    with pytest.raises(UnknownPhysicianError):
        get_schedule(store, "dr-Z", run_date)
    with pytest.raises(UnknownPatientError):
        get_section(store, "P999", EhrSection.labs)


def test_chart_carries_its_appointments(store):
    assert [a.appointment_id for a in store.chart("P001").appointments] == ["A001"]


def test_patient_details_include_age(store, run_date):
    payload = get_section(store, "P009", EhrSection.patient_details, run_date)

    assert not payload.empty
    assert payload.as_of == run_date
    # birthday on the run date
    assert payload.items[0]["age_years"] == 50


def test_empty_section_is_flagged(store):
    payload = get_section(store, "P010", EhrSection.diagnosis_details)

    assert payload.empty
    assert payload.items == []


def test_note_sections(store):
    payload = get_section(store, "P006", EhrSection.notes_radonc)

    assert [note["date"] for note in payload.items] == ["2025-07-28"]
    assert get_section(store, "P006", EhrSection.notes_ent).empty


def test_appointments_today_filters_by_date(store, run_date):
    assert len(get_section(store, "P001", EhrSection.appointments_today, run_date).items) == 1
    assert get_section(store, "P001", EhrSection.appointments_today, date(2025, 8, 5)).empty


def test_appointments_today_needs_a_date(store):
    with pytest.raises(ValueError):
        get_section(store, "P001", EhrSection.appointments_today)


def test_labs_are_date_ascending(store):
    labs = get_section(store, "P001", EhrSection.labs).items
    assert [lab["date"] for lab in labs] == ["2024-12-05", "2025-03-10", "2025-06-02"]


def test_missing_directory(tmp_path):
    with pytest.raises(MissingDirectoryError):
        load_cohort(tmp_path / "nowhere")


def test_malformed_json_reports_the_line(cohort_copy):
    path = cohort_copy / "patients" / "P003.json"
    path.write_text('{\n  "patient_id": "P003",\n  "name": \n}\n', encoding="utf-8")

    with pytest.raises(MalformedDocumentError) as error:
        load_cohort(cohort_copy)
    assert error.value.line == 4
    assert "P003.json:4" in str(error.value)


def test_validation_lists_every_problem(cohort_copy):
    edit_json(cohort_copy / "patients" / "P002.json", lambda d: d.update(sex="robot"))
    (cohort_copy / "patients" / "P004.json").unlink()

    findings = validate_cohort(cohort_copy)

    assert any("P002.json" in f for f in findings)
    assert any("unknown patient P004" in f for f in findings)


def test_dangling_physician(cohort_copy):
    def retarget(document):
        document["appointments"][0]["physician_id"] = "dr-Q"

    edit_json(cohort_copy / "schedules" / "2025-08-04.json", retarget)

    with pytest.raises(DanglingReferenceError, match="dr-Q"):
        load_cohort(cohort_copy)


def test_start_time_needs_an_offset(cohort_copy):
    def strip_offset(document):
        document["appointments"][0]["start_time"] = "2025-08-04T08:00:00"

    edit_json(cohort_copy / "schedules" / "2025-08-04.json", strip_offset)

    assert any("zone offset" in f for f in validate_cohort(cohort_copy))


def test_file_name_must_match_id(cohort_copy):
    shutil.copy(cohort_copy / "physicians" / "dr-A.json", cohort_copy / "physicians" / "dr-D.json")

    assert any("does not match file name" in f for f in validate_cohort(cohort_copy))


def test_dump_and_reload(store, tmp_path):
    reloaded = load_cohort(dump_cohort(store, tmp_path / "dumped"))

    assert reloaded.physicians == store.physicians
    assert reloaded.patients == store.patients
    assert reloaded.schedules == store.schedules
