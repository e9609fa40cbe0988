from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from models.chart import DiagnosisDetail, PriorRadiation
from models.matching import (
    CombinationQuery,
    Demographics,
    DemographicsMissing,
    RankedKeywords,
    SearchFailed,
    TrialPool,
)
from models.results import CriterionReport, CriterionStatus
from models.trial import Criterion, TrialRecord
from util.errors import MatcherError, RegistrySearchError
from util.matcher import (
    MAX_SEARCHES,
    MIN_COMBINATIONS,
    MIN_SEARCHES,
    POOL_CAP,
    STOP_AT,
    build_timeline,
    evaluate_eligibility,
    expand_synonyms,
    filter_pool,
    generate_keywords,
    iterative_search,
    make_combinations,
)


def combos_for(chart):
    keywords = generate_keywords(build_timeline(chart), chart)
    return [expand_synonyms(combo) for combo in make_combinations(keywords)]


def demographics_for(chart, day):
    return Demographics(age_years=chart.age_on(day), sex=chart.sex.value)


def shortlist_for(store, registry, patient_id, day):
    chart = store.chart(patient_id)
    pool = iterative_search(combos_for(chart), registry, demographics_for(chart, day))
    reports = {trial.nct_id: evaluate_eligibility(trial, chart, day) for trial in pool.trials}
    return pool, [item.trial.nct_id for item in filter_pool(pool, reports)]


def nct(*numbers):
    return [f"NCT{n:08d}" for n in numbers]


def test_prostate_keywords(store):
    chart = store.chart("P001")
    keywords = generate_keywords(build_timeline(chart), chart)

    assert keywords.condition_terms() == ["prostate cancer", "prostate adenocarcinoma"]
    assert keywords.intervention_terms()[:3] == ["radiation therapy", "proton therapy", "androgen deprivation"]


def test_combinations_are_ranked(store):
    chart = store.chart("P001")
    combos = make_combinations(generate_keywords(build_timeline(chart), chart))

    assert len(combos) >= MIN_COMBINATIONS
    assert [c.rank for c in combos] == list(range(1, len(combos) + 1))
    assert combos[0].label() == "(prostate cancer) AND (radiation therapy)"


def test_combinations_need_a_condition():
    with pytest.raises(MatcherError):
        make_combinations(RankedKeywords(interventions=[("radiation therapy", 1)]))


def test_combinations_stop_when_the_lexicon_runs_out():
    combos = make_combinations(RankedKeywords(conditions=[("kidney cancer", 1)]))
    assert [c.label() for c in combos] == ["(kidney cancer)"]


def test_unknown_site_becomes_a_plain_condition(store):
    kidney = DiagnosisDetail(site="Kidney", onset_date=date(2025, 1, 1), histology="clear cell carcinoma")
    chart = store.chart("P010").model_copy(update={"diagnoses": [kidney]})
    keywords = generate_keywords(build_timeline(chart), chart)

    assert keywords.condition_terms() == ["kidney cancer"]
    assert keywords.interventions == []


def test_synonym_expansion():
    combo = expand_synonyms(
        CombinationQuery(condition_terms=["prostate cancer"], intervention_terms=["radiation therapy"], rank=1)
    )

    assert combo.condition_terms == ["prostate cancer", "prostate adenocarcinoma", "carcinoma of the prostate"]
    assert combo.intervention_terms == ["radiation therapy", "radiotherapy", "external beam radiation therapy"]
    assert combo.rank == 1


def test_ranked_keywords_validation():
    with pytest.raises(ValueError):
        RankedKeywords(conditions=[("Lung Cancer", 1)])
    with pytest.raises(ValueError):
        RankedKeywords(conditions=[("lung cancer", 1), ("lung cancer", 2)])
    with pytest.raises(ValueError):
        RankedKeywords(conditions=[("lung cancer", 2)])


def test_timeline_is_ascending(store):
    timeline = build_timeline(store.chart("P001"))
    dates = [event.date for event in timeline.events]

    assert dates == sorted(dates)
    assert timeline.to_markdown().splitlines()[0] == "| Date | Category | Event |"
    assert any("Gleason 4+3=7" in event.description for event in timeline.events)


def test_prostate_trace(store, registry, run_date):
    pool, shortlist = shortlist_for(store, registry, "P001", run_date)

    assert pool.searches_performed == 3
    assert pool.nct_ids() == nct(1, 2, 7, 8, 9, 10, 3)
    assert [c.new_unique for c in pool.per_search_counts] == [6, 0, 1]
    # 10 needs ECOG 0 and 3 needs PSA below 4
    assert shortlist == nct(1, 2, 7, 8, 9)


def test_breast_trace(store, registry, run_date):
    pool, shortlist = shortlist_for(store, registry, "P005", run_date)

    assert pool.searches_performed == MAX_SEARCHES
    assert pool.nct_ids() == nct(12, 11)
    assert shortlist == nct(12, 11)


def test_lung_trace(store, registry, run_date):
    pool, shortlist = shortlist_for(store, registry, "P008", run_date)

    assert pool.searches_performed == MAX_SEARCHES
    assert [c.new_unique for c in pool.per_search_counts] == [2, 0, 1, 0, 0]
    assert [c.cumulative for c in pool.per_search_counts] == [2, 2, 3, 3, 3]
    # 16 needs ECOG 0-1
    assert shortlist == nct(14, 15)


def test_missing_demographics_skip_the_search(registry):
    combos = [CombinationQuery(condition_terms=["lung cancer"], rank=1)]

    outcome = iterative_search(combos, registry, Demographics(age_years=None, sex="unknown"))

    assert isinstance(outcome, DemographicsMissing)
    assert outcome.missing == ["age", "sex"]


class FailingRegistry:
    def __init__(self, fail_on):
        self.fail_on = fail_on
        self.calls = 0

    def search_trials(self, query):
        self.calls += 1
        if self.calls == self.fail_on:
            raise RegistrySearchError("registry unreachable")
        return []


def test_search_failure_is_reported():
    combos = [CombinationQuery(condition_terms=["lung cancer"], rank=r) for r in (1, 2, 3)]

    outcome = iterative_search(combos, FailingRegistry(fail_on=2), Demographics(age_years=70, sex="male"))

    assert isinstance(outcome, SearchFailed)
    assert outcome.searches_performed == 1
    assert "unreachable" in outcome.error


def test_single_combination_is_broadened():
    registry = FailingRegistry(fail_on=0)
    combos = [CombinationQuery(condition_terms=["lung cancer", "nsclc"], rank=1)]

    pool = iterative_search(combos, registry, Demographics(age_years=70, sex="male"))

    assert pool.searches_performed == MIN_SEARCHES
    assert registry.calls == 2


def trial(number):
    return TrialRecord(nct_id=f"NCT{number:08d}", title=f"Trial {number}", overall_status="recruiting", url="u")


class ScriptedRegistry:
    def __init__(self, batches):
        self.batches = list(batches)

    def search_trials(self, query):
        return [trial(n) for n in self.batches.pop(0)] if self.batches else []


@settings(max_examples=200)
@given(
    batches=st.lists(st.lists(st.integers(1, 40), max_size=12), min_size=1, max_size=8),
    combo_count=st.integers(1, 12),
)
def test_search_stays_within_bounds(batches, combo_count):
    combos = [CombinationQuery(condition_terms=[f"condition {r}"], rank=r) for r in range(1, combo_count + 1)]

    pool = iterative_search(combos, ScriptedRegistry(batches), Demographics(age_years=60, sex="female"))

    assert isinstance(pool, TrialPool)
    assert MIN_SEARCHES <= pool.searches_performed <= MAX_SEARCHES
    assert len(pool.trials) <= POOL_CAP
    assert len(set(pool.nct_ids())) == len(pool.trials)
    if pool.searches_performed < MAX_SEARCHES and pool.searches_performed < combo_count:
        assert len(pool.trials) >= STOP_AT
    cumulative = [count.cumulative for count in pool.per_search_counts]
    assert cumulative == sorted(cumulative)
    assert sum(count.new_unique for count in pool.per_search_counts) == len(pool.trials)


def statuses(reports):
    return [report.status for report in reports]


def test_eligibility_of_the_prostate_patient(store, registry, run_date):
    reports = evaluate_eligibility(registry.get_trial("NCT00000001"), store.chart("P001"), run_date)

    assert statuses(reports) == [
        CriterionStatus.met,
        CriterionStatus.met,
        CriterionStatus.met,
        CriterionStatus.unknown,
    ]
    assert reports[1].evidence == "ECOG 1 <= 2"
    assert reports[3].evidence == "free-text criterion needs clinician review"


def test_prior_radiation_excludes(store, registry, run_date):
    reports = evaluate_eligibility(registry.get_trial("NCT00000014"), store.chart("P007"), run_date)

    assert reports[-1].status == CriterionStatus.not_met
    assert "right lung radiation 75 Gy in 2022" in reports[-1].evidence


def test_lab_threshold_uses_the_latest_value(store, registry, run_date):
    reports = evaluate_eligibility(registry.get_trial("NCT00000003"), store.chart("P001"), run_date)

    assert reports[0].status == CriterionStatus.not_met
    assert reports[0].evidence == "PSA 6.1 ng/mL on 2025-06-02 fails < 4"


def test_missing_facts_are_unknown(store, registry, run_date):
    reports = evaluate_eligibility(registry.get_trial("NCT00000001"), store.chart("P010"), run_date)

    assert statuses(reports)[:2] == [CriterionStatus.unknown, CriterionStatus.unknown]


def test_site_specific_criterion_is_not_applicable(store, run_date):
    criterion = Criterion.model_validate(
        {
            "criterion_id": "X-I1",
            "description": "Gleason 7 or higher",
            "polarity": "inclusion",
            "disease_site": "prostate",
            "predicate": {"kind": "free_text", "text": "Gleason 7 or higher"},
        }
    )
    record = trial(99).model_copy(update={"criteria": [criterion]})

    reports = evaluate_eligibility(record, store.chart("P005"), run_date)

    assert statuses(reports) == [CriterionStatus.not_applicable]


def test_filter_pool_needs_every_report():
    pool = TrialPool(trials=[trial(1)], searches_performed=2)
    with pytest.raises(MatcherError):
        filter_pool(pool, {})


def test_age_on_the_birthday(store):
    chart = store.chart("P009")
    assert chart.age_on(date(2025, 8, 3)) == 49
    assert chart.age_on(date(2025, 8, 4)) == 50


def report(status, number=1):
    return CriterionReport(criterion_id=f"C{number}", status=status, evidence="charted")


def reports_for(statuses_by_trial):
    return {
        f"NCT{n:08d}": [report(status, position) for position, status in enumerate(statuses, start=1)]
        for n, statuses in enumerate(statuses_by_trial, start=1)
    }


report_statuses = st.lists(st.lists(st.sampled_from(list(CriterionStatus)), max_size=6), max_size=25)


@settings(max_examples=200)
@given(statuses_by_trial=report_statuses)
def test_filter_pool_keeps_exactly_the_trials_without_a_failed_criterion(statuses_by_trial):
    pool = TrialPool(trials=[trial(n) for n in range(1, len(statuses_by_trial) + 1)], searches_performed=2)
    reports = reports_for(statuses_by_trial)

    shortlist = filter_pool(pool, reports)

    expected = [
        f"NCT{n:08d}"
        for n, statuses in enumerate(statuses_by_trial, start=1)
        if all(status != CriterionStatus.not_met for status in statuses)
    ]
    assert [item.trial.nct_id for item in shortlist] == expected
    assert all(item.reports == reports[item.trial.nct_id] for item in shortlist)


@settings(max_examples=200)
@given(statuses_by_trial=report_statuses.filter(bool), data=st.data())
def test_unknown_never_removes_and_not_met_always_removes(statuses_by_trial, data):
    pool = TrialPool(trials=[trial(n) for n in range(1, len(statuses_by_trial) + 1)], searches_performed=2)
    reports = reports_for(statuses_by_trial)
    target = trial(data.draw(st.integers(1, len(statuses_by_trial)))).nct_id
    before = [item.trial.nct_id for item in filter_pool(pool, reports)]

    with_unknown = {**reports, target: reports[target] + [report(CriterionStatus.unknown, 99)]}
    with_failure = {**reports, target: reports[target] + [report(CriterionStatus.not_met, 99)]}

    assert [item.trial.nct_id for item in filter_pool(pool, with_unknown)] == before
    assert [item.trial.nct_id for item in filter_pool(pool, with_failure)] == [n for n in before if n != target]


def with_prior_radiation(chart, *courses):
    facts = chart.eligibility_facts.model_copy(update={"prior_radiation": list(courses)})
    return chart.model_copy(update={"eligibility_facts": facts})


def test_no_prior_pelvic_radiation(store, registry, run_date):
    record = registry.get_trial("NCT00000006")
    irradiated = with_prior_radiation(store.chart("P001"), PriorRadiation(dose_gy=45, year=2017, site="pelvis"))

    (untreated,) = evaluate_eligibility(record, store.chart("P001"), run_date)
    (treated,) = evaluate_eligibility(record, irradiated, run_date)

    assert untreated.status == CriterionStatus.met
    assert untreated.evidence == "no prior treatment matching pelvic radiation, pelvis radiation recorded"
    assert treated.status == CriterionStatus.not_met
    assert treated.evidence == "prior pelvis radiation 45 Gy in 2017"


def test_other_sites_do_not_count_as_pelvic(store, registry, run_date):
    chart = with_prior_radiation(store.chart("P001"), PriorRadiation(dose_gy=48, year=2017, site="mediastinum"))

    (outcome,) = evaluate_eligibility(registry.get_trial("NCT00000006"), chart, run_date)

    assert outcome.status == CriterionStatus.met


@pytest.mark.parametrize(
    "kind,polarity,courses,status",
    [
        ("excludes_prior_treatment", "inclusion", [], CriterionStatus.met),
        ("excludes_prior_treatment", "inclusion", [PriorRadiation(dose_gy=45, year=2017, site="pelvis")], CriterionStatus.not_met),
        ("excludes_prior_treatment", "exclusion", [], CriterionStatus.not_met),
        ("excludes_prior_treatment", "exclusion", [PriorRadiation(dose_gy=45, year=2017, site="pelvis")], CriterionStatus.met),
        ("requires_prior_treatment", "exclusion", [], CriterionStatus.met),
        ("requires_prior_treatment", "exclusion", [PriorRadiation(dose_gy=45, year=2017, site="pelvis")], CriterionStatus.not_met),
    ],
)
def test_prior_treatment_polarity(store, run_date, kind, polarity, courses, status):
    criterion = Criterion.model_validate(
        {
            "criterion_id": "X-1",
            "description": "Prior pelvic radiation",
            "polarity": polarity,
            "predicate": {"kind": kind, "terms": ["pelvis radiation"]},
        }
    )
    record = trial(98).model_copy(update={"criteria": [criterion]})

    (outcome,) = evaluate_eligibility(record, with_prior_radiation(store.chart("P001"), *courses), run_date)

    assert outcome.status == status
