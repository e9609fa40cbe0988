import pytest

from models.chart import VisitKind, is_trial_eligible_visit
from util.visits import classify_visit_kind


@pytest.mark.parametrize(
    "label,kind",
    [
        ("New Patient Consult", VisitKind.consult),
        ("Consult Lung", VisitKind.consult),
        ("NEW PATIENT", VisitKind.new),
        ("CT Simulation", VisitKind.simulation),
        ("On Treatment Visit (OTV)", VisitKind.management),
        ("Weekly Management", VisitKind.management),
        ("Follow Up Breast", VisitKind.follow_up),
        ("Follow-up H&N", VisitKind.follow_up),
        ("Radiation Treatment", VisitKind.treatment),
        ("Nurse Visit", VisitKind.other),
    ],
)
def test_labels(label, kind):
    assert classify_visit_kind(label) == kind


@pytest.mark.parametrize("label", ["", "   "])
def test_empty_label(label):
    with pytest.raises(ValueError):
        classify_visit_kind(label)


def test_first_rule_wins():
    rules = [("follow", VisitKind.follow_up), ("consult", VisitKind.consult)]
    assert classify_visit_kind("Consult / Follow-up", rules) == VisitKind.follow_up


def test_trial_eligible_kinds():
    assert [k for k in VisitKind if is_trial_eligible_visit(k)] == [VisitKind.consult, VisitKind.new]
