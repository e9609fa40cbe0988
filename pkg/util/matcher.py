import logging
from datetime import date
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Tuple, Union

from models.chart import PatientChart, Specialty
from models.matching import (
    CombinationQuery,
    Demographics,
    DemographicsMissing,
    EventCategory,
    RankedKeywords,
    SearchCount,
    SearchFailed,
    ShortlistItem,
    Timeline,
    TimelineEvent,
    TrialPool,
)
from models.results import CriterionReport, CriterionStatus, Scenario
from models.trial import Comparator, Criterion, Polarity, PredicateKind, TrialQuery, TrialRecord, TrialSex
from util.errors import MatcherError, RegistryError
from util.nccn import format_psa
from util.options import Options
from util.registry import TrialRegistry, matches_any, term_matches

logger = logging.getLogger(__name__)

MIN_COMBINATIONS = 10
MIN_SEARCHES = 2
MAX_SEARCHES = 5
STOP_AT = 7
POOL_CAP = 15


def dedup(terms: Iterable[str]) -> List[str]:
    seen, kept = set(), []
    for term in terms:
        if term not in seen:
            seen.add(term)
            kept.append(term)
    return kept


class Lexicon:
    """
    Site vocabulary and synonyms, read from lexicon/synonyms.json.
    """

    def __init__(self, document: dict):
        self.sites: Dict[str, dict] = document.get("sites", {})
        self.synonym_table: Dict[str, List[str]] = {
            key.lower(): [value.lower() for value in values] for key, values in document.get("synonyms", {}).items()
        }

    def site_for(self, text: str) -> Optional[str]:
        lowered = text.lower()
        for site, entry in self.sites.items():
            if any(term_matches(keyword, lowered) for keyword in entry.get("match", [site])):
                return site
        return None

    def conditions(self, site: str) -> List[str]:
        return [term.lower() for term in self.sites.get(site, {}).get("conditions", [])]

    def interventions(self, site: str) -> List[str]:
        return [term.lower() for term in self.sites.get(site, {}).get("interventions", [])]

    def synonyms(self, term: str) -> List[str]:
        return self.synonym_table.get(term.lower(), [])


@lru_cache(maxsize=None)
def default_lexicon() -> Lexicon:
    return Lexicon(Options.get_lexicon("synonyms"))


def build_timeline(chart: PatientChart) -> Timeline:
    events: List[TimelineEvent] = []

    for report in chart.pathology_reports:
        events.append(TimelineEvent(date=report.date, category=EventCategory.diagnostic, description=f"Pathology: {report.title}"))
    for report in chart.radiology_reports:
        events.append(TimelineEvent(date=report.date, category=EventCategory.diagnostic, description=f"Imaging: {report.title}"))
    for lab in chart.labs:
        value = format_psa(lab.value) if lab.analyte.upper() == "PSA" else f"{lab.value:g}"
        events.append(TimelineEvent(date=lab.date, category=EventCategory.lab, description=f"{lab.analyte} {value} {lab.unit}"))
    for diagnosis in chart.diagnoses:
        text = f"Diagnosis: {diagnosis.describe()}"
        if diagnosis.prostate_detail is not None:
            text += f", Gleason {diagnosis.prostate_detail.gleason_label()}"
        events.append(TimelineEvent(date=diagnosis.onset_date, category=EventCategory.staging, description=text))
    for treatment in chart.treatments:
        events.append(
            TimelineEvent(
                date=treatment.start_date,
                category=EventCategory.treatment,
                description=f"Started {treatment.modality} to the {treatment.site} ({treatment.course})",
            )
        )
    for medication in chart.medications:
        events.append(TimelineEvent(date=medication.start_date, category=EventCategory.treatment, description=f"Started {medication.name}"))
    for specialty, notes in chart.notes.items():
        category = EventCategory.surgery if specialty == Specialty.surgery else EventCategory.other
        for note in notes:
            events.append(TimelineEvent(date=note.date, category=category, description=f"{specialty.value} note: {note.title}"))

    return Timeline(events=events)


def generate_keywords(timeline: Timeline, chart: PatientChart, lexicon: Optional[Lexicon] = None) -> RankedKeywords:
    lexicon = lexicon or default_lexicon()
    conditions: List[str] = []
    interventions: List[str] = []

    # Most recent diagnosis first.
    for diagnosis in reversed(chart.diagnoses):
        site = lexicon.site_for(f"{diagnosis.site} {diagnosis.histology}")
        if site is None:
            conditions.append(f"{diagnosis.site} cancer".lower())
            continue
        conditions.extend(lexicon.conditions(site))
        interventions.extend(lexicon.interventions(site))

    conditions, interventions = dedup(conditions), dedup(interventions)
    return RankedKeywords(
        conditions=[(term, rank) for rank, term in enumerate(conditions, start=1)],
        interventions=[(term, rank) for rank, term in enumerate(interventions, start=1)],
    )


def make_combinations(keywords: RankedKeywords, minimum: int = MIN_COMBINATIONS) -> List[CombinationQuery]:
    conditions = keywords.condition_terms()
    if not conditions:
        raise MatcherError("cannot combine keywords without a condition")

    pairs: List[Tuple[str, Optional[str]]] = [
        (condition, intervention) for condition in conditions for intervention in keywords.intervention_terms()
    ]
    for condition in conditions:
        if len(pairs) >= minimum:
            break
        pairs.append((condition, None))
    if len(pairs) < minimum:
        logger.info("Lexicon exhausted at %d combinations (wanted %d)", len(pairs), minimum)

    return [
        CombinationQuery(condition_terms=[condition], intervention_terms=[intervention] if intervention else [], rank=rank)
        for rank, (condition, intervention) in enumerate(pairs, start=1)
    ]


def expand_synonyms(combo: CombinationQuery, lexicon: Optional[Lexicon] = None) -> CombinationQuery:
    lexicon = lexicon or default_lexicon()

    def expand(terms):
        return dedup(word for term in terms for word in [term] + lexicon.synonyms(term))

    return CombinationQuery(
        condition_terms=expand(combo.condition_terms),
        intervention_terms=expand(combo.intervention_terms),
        rank=combo.rank,
    )


class SearchLoop:
    """
    Bookkeeping for the bounded iterative search. Callers ask for the next
    query, run it however they like, and hand the results back to `absorb`.
    """

    def __init__(self, combos: List[CombinationQuery], demographics: Demographics, institution: str):
        self.combos = sorted(combos, key=lambda combo: combo.rank)
        self.demographics = demographics
        self.institution = institution
        self.pool: Dict[str, TrialRecord] = {}
        self.counts: List[SearchCount] = []
        self.position = 0
        self.broadened = False

    @property
    def searches(self) -> int:
        return len(self.counts)

    def _query(self, conditions: List[str], interventions: List[str]) -> TrialQuery:
        return TrialQuery(
            condition_terms=conditions,
            intervention_terms=interventions,
            age_years=self.demographics.age_years,
            sex=TrialSex(self.demographics.sex),
            institution=self.institution,
        )

    def next_query(self) -> Optional[TrialQuery]:
        if self.searches >= MAX_SEARCHES:
            return None
        if self.searches >= MIN_SEARCHES and len(self.pool) >= STOP_AT:
            return None
        if self.position < len(self.combos):
            combo = self.combos[self.position]
            self.position += 1
            return self._query(combo.condition_terms, combo.intervention_terms)
        if self.searches < MIN_SEARCHES and not self.broadened and self.combos:
            # Out of combinations before the second search: merge every condition term.
            self.broadened = True
            merged = dedup(term for combo in self.combos for term in combo.condition_terms)
            logger.info("Combinations exhausted after %d searches; broadening to %s", self.searches, merged)
            return self._query(merged, [])
        return None

    def absorb(self, results: List[TrialRecord]) -> SearchCount:
        added = 0
        for trial in results:
            if trial.nct_id in self.pool or len(self.pool) >= POOL_CAP:
                continue
            self.pool[trial.nct_id] = trial
            added += 1
        count = SearchCount(new_unique=added, cumulative=len(self.pool))
        self.counts.append(count)
        return count

    def result(self) -> TrialPool:
        return TrialPool(trials=list(self.pool.values()), searches_performed=self.searches, per_search_counts=self.counts)


def iterative_search(
    combos: List[CombinationQuery],
    client: TrialRegistry,
    demographics: Demographics,
    institution: str = "Mayo Clinic",
) -> Union[TrialPool, DemographicsMissing, SearchFailed]:
    missing = demographics.missing()
    if missing:
        return DemographicsMissing(missing=missing)

    loop = SearchLoop(combos, demographics, institution)
    query = loop.next_query()
    while query is not None:
        try:
            results = client.search_trials(query)
        except RegistryError as e:
            logger.warning("Trial search failed after %d searches: %s", loop.searches, e)
            return SearchFailed(error=str(e), searches_performed=loop.searches)
        count = loop.absorb(results)
        logger.debug("Search %d: %d new, %d so far", loop.searches, count.new_unique, count.cumulative)
        query = loop.next_query()

    return loop.result()


def _num(value) -> str:
    return "any" if value is None else f"{value:g}"


def _prior_treatments(chart: PatientChart, as_of: date) -> List[Tuple[str, str]]:
    """
    (descriptor, evidence) pairs for everything the patient has already received.
    An empty list means no prior treatment.
    """
    facts = chart.eligibility_facts
    found = []
    for course in facts.prior_radiation:
        label = f"{course.site} radiation" if course.site else "radiation"
        found.append((label, f"prior {label} {course.dose_gy:g} Gy in {course.year}"))
    for therapy in facts.prior_systemic_therapies:
        found.append((therapy, f"prior {therapy}"))
    for treatment in chart.treatments:
        if treatment.start_date <= as_of:
            found.append((f"{treatment.site} {treatment.modality}", f"{treatment.modality} to the {treatment.site} from {treatment.start_date}"))
    for medication in chart.medications:
        if medication.start_date <= as_of:
            found.append((medication.name, f"{medication.name} since {medication.start_date}"))
    return found


def _compare(value: float, comparator: Comparator, threshold: float) -> bool:
    return {
        Comparator.lt: value < threshold,
        Comparator.le: value <= threshold,
        Comparator.gt: value > threshold,
        Comparator.ge: value >= threshold,
    }[comparator]


def evaluate_predicate(criterion: Criterion, chart: PatientChart, as_of: date) -> Tuple[Optional[bool], str]:
    """
    Whether the chart satisfies the predicate (None when the fact is absent),
    with the evidence used.
    """
    predicate = criterion.predicate
    kind = predicate.kind

    if kind == PredicateKind.age_range:
        age = chart.age_on(as_of)
        if age is None:
            return None, "age not recorded"
        inside = (predicate.min_years is None or age >= predicate.min_years) and (
            predicate.max_years is None or age <= predicate.max_years
        )
        where = "within" if inside else "outside"
        return inside, f"age {age} {where} [{_num(predicate.min_years)},{_num(predicate.max_years)}]"

    if kind == PredicateKind.sex:
        if chart.sex.value == "unknown":
            return None, "sex not recorded"
        fits = predicate.sex == TrialSex.all or predicate.sex.value == chart.sex.value
        return fits, f"sex {chart.sex.value} {'matches' if fits else 'does not match'} {predicate.sex.value}"

    if kind == PredicateKind.diagnosis_match:
        if not chart.diagnoses:
            return None, "no diagnosis recorded"
        for diagnosis in reversed(chart.diagnoses):
            keywords = [diagnosis.site, f"{diagnosis.site} cancer", diagnosis.histology, diagnosis.describe()]
            if matches_any(predicate.terms, keywords):
                return True, f"diagnosis {diagnosis.describe()} matches {', '.join(predicate.terms)}"
        return False, f"no diagnosis matches {', '.join(predicate.terms)}"

    if kind in (PredicateKind.requires_prior_treatment, PredicateKind.excludes_prior_treatment):
        wanted = ", ".join(predicate.terms)
        hits = [evidence for label, evidence in _prior_treatments(chart, as_of) if matches_any(predicate.terms, [label])]
        if hits:
            evidence = "; ".join(hits)
        else:
            evidence = f"no prior treatment matching {wanted} recorded"
        received = bool(hits)
        return (received if kind == PredicateKind.requires_prior_treatment else not received), evidence

    if kind == PredicateKind.lab_threshold:
        analyte = predicate.analyte.upper()
        series = [lab for lab in chart.labs if lab.analyte.upper() == analyte and lab.date <= as_of]
        if not series:
            return None, f"no {predicate.analyte} result recorded"
        latest = series[-1]
        fits = _compare(latest.value, predicate.comparator, predicate.threshold)
        value = format_psa(latest.value) if analyte == "PSA" else f"{latest.value:g}"
        return fits, (
            f"{latest.analyte} {value} {latest.unit} on {latest.date.isoformat()} "
            f"{'satisfies' if fits else 'fails'} {predicate.comparator.value} {predicate.threshold:g}"
        )

    if kind == PredicateKind.ecog_max:
        ecog = chart.eligibility_facts.ecog
        if ecog is None:
            return None, "ECOG not recorded"
        fits = ecog <= predicate.ecog_max
        return fits, f"ECOG {ecog} {'<=' if fits else '>'} {predicate.ecog_max}"

    return None, "free-text criterion needs clinician review"


def _has_site(chart: PatientChart, site: str) -> bool:
    return any(term_matches(site, d.site) or term_matches(d.site, site) for d in chart.diagnoses)


def evaluate_eligibility(trial: TrialRecord, chart: PatientChart, as_of: date) -> List[CriterionReport]:
    reports = []
    for criterion in trial.criteria:
        if criterion.disease_site and not _has_site(chart, criterion.disease_site):
            status, evidence = CriterionStatus.not_applicable, f"patient has no {criterion.disease_site} diagnosis"
        else:
            satisfied, evidence = evaluate_predicate(criterion, chart, as_of)
            if satisfied is None:
                status = CriterionStatus.unknown
            elif criterion.polarity == Polarity.exclusion:
                status = CriterionStatus.not_met if satisfied else CriterionStatus.met
            else:
                status = CriterionStatus.met if satisfied else CriterionStatus.not_met
        reports.append(
            CriterionReport(
                criterion_id=criterion.criterion_id,
                status=status,
                evidence=evidence,
                description=criterion.description,
            )
        )
    return reports


def filter_pool(pool: TrialPool, reports_by_trial: Dict[str, List[CriterionReport]]) -> List[ShortlistItem]:
    shortlist = []
    for trial in pool.trials:
        if trial.nct_id not in reports_by_trial:
            raise MatcherError(f"no eligibility reports for {trial.nct_id}")
        reports = reports_by_trial[trial.nct_id]
        if any(report.status == CriterionStatus.not_met for report in reports):
            continue
        shortlist.append(ShortlistItem(trial=trial, reports=reports))
    return shortlist


def _one_line(text: str) -> str:
    return " ".join(text.split())


def format_result(
    scenario: Scenario,
    shortlist: List[ShortlistItem],
    patient_name: str,
    patient_id: Optional[str] = None,
) -> str:
    scenario = Scenario(scenario)
    if (scenario == Scenario.trials_found) != bool(shortlist):
        raise MatcherError(f"scenario {scenario.value} does not fit a shortlist of {len(shortlist)}")

    full_name = _one_line(patient_name)

    if scenario == Scenario.none_found:
        return (
            "```<ANALYSIS_SUMMARY>\n"
            f"### Clinical Trials Eligibility Summary for {full_name}\n"
            f"No relevant clinical trials were found for {full_name}.\n"
            "</ANALYSIS_SUMMARY>```"
        )
    if scenario == Scenario.demographics_missing:
        return (
            "```<ANALYSIS_SUMMARY>\n"
            f"Clinical Trials Eligibility Summary for {full_name}\n"
            f"Clinical trial eligibility could not be evaluated for patient {patient_id or full_name} "
            "because their age and sex could not be retrieved.\n"
            "</ANALYSIS_SUMMARY>```"
        )
    if scenario == Scenario.search_error:
        return (
            "```<ANALYSIS_SUMMARY>\n"
            f"### Clinical Trials Eligibility Summary for {full_name}\n"
            f"An error occurred when searching for clinical trials for {full_name}.\n"
            "</ANALYSIS_SUMMARY>```"
        )

    lines = [
        "```<ANALYSIS_SUMMARY>",
        f"Clinical Trials Eligibility Summary for {full_name}",
        f"{full_name} is potentially eligible to participate in the following clinical trials:",
        "```",
        "",
    ]
    for number, item in enumerate(shortlist, start=1):
        summaries = item.summaries()
        lines += [
            f"#### {number}. **{item.trial.nct_id}**",
            "",
            f"- **Title:** {_one_line(item.trial.title)}",
            "- **Criteria Evaluation Summary:**",
            f"  - **Met:** {_one_line(summaries['met'])}",
            f"  - **Unknown:** {_one_line(summaries['unknown'])}",
            f"  - **Not Applicable:** {_one_line(summaries['not_applicable'])}",
            f"- **URL:** {item.trial.url}",
            "",
        ]
    lines += ["```", "</ANALYSIS_SUMMARY>```"]
    return "\n".join(lines)
