import json
import logging
from datetime import date
from typing import Any, Dict, List, Optional, Tuple

from models.agent import AgentTranscript, BackendMessage, PromptText, TemplateId, ToolCall, ToolName
from models.chart import PatientChart, Specialty, VisitKind
from models.matching import Demographics, TrialPool
from models.results import FALLBACK_SUMMARY, Scenario
from models.trial import TrialQuery, TrialRecord
from util.agent import is_empty, is_error
from util.ehr import NOTE_SECTIONS, EhrSection
from util.errors import ClinicalRuleError
from util.matcher import (
    Lexicon,
    SearchLoop,
    build_timeline,
    default_lexicon,
    evaluate_eligibility,
    expand_synonyms,
    filter_pool,
    format_result,
    generate_keywords,
    make_combinations,
)
from util.nccn import prostate_addendum, prostate_diagnoses
from util.parsing import DONE, SUMMARY_KEY

logger = logging.getLogger(__name__)

NOTE_ORDER_SUMMARY = [
    Specialty.radiology,
    Specialty.pathology,
    Specialty.surgery,
    Specialty.medonc,
    Specialty.ent,
    Specialty.urology,
    Specialty.radonc,
]

NOTE_ORDER_TRIALS = [
    Specialty.pathology,
    Specialty.radiology,
    Specialty.surgery,
    Specialty.medonc,
    Specialty.radonc,
    Specialty.urology,
    Specialty.ent,
]

SEX_NOUNS = {"male": "man", "female": "woman"}


def _call(tool: ToolName, **arguments) -> ToolCall:
    return ToolCall(tool_name=tool, arguments=arguments)


def summary_retrieval_calls(patient_id: str) -> List[ToolCall]:
    calls = [
        _call(tool, patient_id=patient_id)
        for tool in (
            ToolName.get_patient_details,
            ToolName.get_treatment_details,
            ToolName.get_diagnosis_details,
            ToolName.get_appointments,
            ToolName.get_radiology_reports,
            ToolName.get_pathology_reports,
        )
    ]
    return calls + [
        _call(ToolName.get_clinical_notes, patient_id=patient_id, specialty=specialty.value)
        for specialty in NOTE_ORDER_SUMMARY
    ]


def trial_retrieval_calls(patient_id: str) -> List[ToolCall]:
    calls = [
        _call(tool, patient_id=patient_id)
        for tool in (
            ToolName.get_patient_details,
            ToolName.get_diagnosis_details,
            ToolName.get_appointments,
            ToolName.get_pathology_reports,
            ToolName.get_radiology_reports,
        )
    ]
    return calls + [
        _call(ToolName.get_clinical_notes, patient_id=patient_id, specialty=specialty.value)
        for specialty in NOTE_ORDER_TRIALS
    ]


def chart_from_results(patient_id: str, name: str, results: List[Any]) -> Tuple[PatientChart, Optional[date], Optional[int]]:
    """
    Rebuild a chart from retrieval payloads. Errored payloads are skipped.
    Returns the chart, the as-of date reported by the store and the age it
    computed, if any.
    """
    document: Dict[str, Any] = {"patient_id": patient_id, "name": name}
    notes: Dict[str, list] = {}
    as_of: Optional[date] = None
    age: Optional[int] = None

    for payload in results:
        if is_error(payload) or not isinstance(payload, dict):
            continue
        for section in payload.get("sections", []):
            kind = EhrSection(section["section"])
            items = section.get("items", [])
            if section.get("as_of") and as_of is None:
                as_of = date.fromisoformat(section["as_of"])

            if kind == EhrSection.patient_details:
                if items:
                    details = items[0]
                    document["name"] = details.get("name") or name
                    document["date_of_birth"] = details.get("date_of_birth")
                    document["sex"] = details.get("sex", "unknown")
                    document["eligibility_facts"] = details.get("eligibility_facts", {})
                    age = details.get("age_years")
            elif kind == EhrSection.treatment_details:
                document["treatments"] = items
            elif kind == EhrSection.diagnosis_details:
                document["diagnoses"] = items
            elif kind == EhrSection.appointments_today:
                document["appointments"] = items
            elif kind == EhrSection.radiology_reports:
                document["radiology_reports"] = items
            elif kind == EhrSection.pathology_reports:
                document["pathology_reports"] = items
            elif kind in NOTE_SECTIONS:
                notes[NOTE_SECTIONS[kind].value] = items
            elif kind == EhrSection.medications:
                document["medications"] = items
            else:
                document["labs"] = items

    document["notes"] = notes
    return PatientChart.model_validate(document), as_of, age


def _num(value: float) -> str:
    return f"{value:g}"


def _first_sentence(text: str, limit: int = 200) -> str:
    text = " ".join(text.split())
    end = text.find(". ")
    sentence = text if end < 0 else text[: end + 1]
    if len(sentence) > limit:
        sentence = sentence[: limit - 3].rstrip() + "..."
    return sentence.rstrip(".")


def _duration(start: date, end: date) -> str:
    days = (end - start).days
    if days >= 60:
        return f"{days // 30} months"
    if days >= 14:
        return f"{days // 7} weeks"
    return f"{days} days" if days != 1 else "1 day"


def _introduction(chart: PatientChart, as_of: Optional[date]) -> str:
    age = chart.age_on(as_of) if as_of else None
    noun = SEX_NOUNS.get(chart.sex.value, "patient")
    text = f"{chart.name} is a {age}-year-old {noun}" if age is not None else f"{chart.name} is a {noun}"
    if not chart.diagnoses:
        return text + " with no cancer diagnosis on file."

    current = chart.diagnoses[-1]
    text += f" with {current.describe()} diagnosed {current.onset_date.isoformat()}"
    earlier = chart.diagnoses[:-1]
    if earlier:
        text += " and a history of " + ", ".join(f"{d.describe()} ({d.onset_date.year})" for d in earlier)
    return text + "."


def _treatment_sentences(chart: PatientChart, as_of: Optional[date]) -> List[str]:
    started = [t for t in chart.treatments if as_of is None or t.start_date <= as_of]
    if not started:
        return []

    current = started[-1]
    details = f"{current.modality} to the {current.site} ({current.course}) started {current.start_date.isoformat()}"
    if current.fractions_prescribed:
        details += f", fraction {current.fractions_delivered or 0} of {current.fractions_prescribed}"
    if current.dose_gy_prescribed and current.dose_gy_delivered is not None:
        details += f", {_num(current.dose_gy_delivered)} of {_num(current.dose_gy_prescribed)} Gy delivered"
    elif current.dose_gy_prescribed:
        details += f", {_num(current.dose_gy_prescribed)} Gy prescribed"
    if current.last_treatment_date:
        details += f", last treatment {current.last_treatment_date.isoformat()}"
    if current.next_treatment_date:
        details += f", next treatment {current.next_treatment_date.isoformat()}"

    ongoing = (
        current.fractions_prescribed is not None and (current.fractions_delivered or 0) < current.fractions_prescribed
    ) or (current.next_treatment_date is not None and (as_of is None or current.next_treatment_date >= as_of))
    sentences = [("Currently receiving " if ongoing else "Completed ") + details + "."]

    earlier = started[:-1]
    if earlier:
        sentences.append(
            "Earlier treatment: "
            + ", ".join(f"{t.modality} to the {t.site} ({t.start_date.year})" for t in earlier)
            + "."
        )
    return sentences


def _prior_radiation_sentence(chart: PatientChart) -> Optional[str]:
    courses = sorted(chart.eligibility_facts.prior_radiation, key=lambda r: r.year, reverse=True)
    if not courses:
        return None
    parts = [
        f"{_num(course.dose_gy)} Gy in {course.year}" + (f" to the {course.site}" if course.site else "")
        for course in courses
    ]
    return "Prior radiation: " + ", ".join(parts) + "."


def _medication_sentence(chart: PatientChart, as_of: Optional[date]) -> Optional[str]:
    if as_of is None:
        active = [m for m in chart.medications if m.end_date is None]
    else:
        active = [m for m in chart.medications if m.active_on(as_of)]
    if not active:
        return None
    parts = []
    for medication in active:
        if as_of is not None:
            parts.append(f"{medication.name} for {_duration(medication.start_date, as_of)} (since {medication.start_date.isoformat()})")
        else:
            parts.append(f"{medication.name} since {medication.start_date.isoformat()}")
    return "Current medications: " + ", ".join(parts) + "."


def _latest_document_sentence(label: str, documents, as_of: Optional[date]) -> Optional[str]:
    documents = [d for d in documents if as_of is None or d.date <= as_of]
    if not documents:
        return None
    latest = documents[-1]
    text = f"{label}: {latest.title} on {latest.date.isoformat()}"
    if latest.text.strip():
        text += f" ({_first_sentence(latest.text)})"
    return text + "."


def _visit_sentences(chart: PatientChart, appointment_id: Optional[str]) -> Tuple[List[str], Optional[VisitKind]]:
    if not chart.appointments:
        return [], None
    current = next((a for a in chart.appointments if a.appointment_id == appointment_id), chart.appointments[0])
    sentences = [f"Today's visit: {current.raw_type_label} at {current.start_time.strftime('%H:%M')}."]
    others = [a for a in chart.appointments if a.appointment_id != current.appointment_id]
    if others:
        sentences.append(
            "Other appointments today: "
            + ", ".join(f"{a.raw_type_label} at {a.start_time.strftime('%H:%M')}" for a in others)
            + "."
        )
    return sentences, current.visit_kind


def _progress_note_sentence(chart: PatientChart, as_of: Optional[date]) -> Optional[str]:
    candidates = []
    for specialty, notes in chart.notes.items():
        for note in notes:
            if as_of is None or note.date < as_of:
                # Radiation oncology notes win ties.
                candidates.append((note.date, specialty == Specialty.radonc, specialty, note))
    if not candidates:
        return None
    _, _, specialty, note = max(candidates, key=lambda c: (c[0], c[1]))
    text = f"Prior progress note ({specialty.value}, {note.date.isoformat()}): {note.title}"
    if note.text.strip():
        text += f". {_first_sentence(note.text)}"
    return text + "."


def compose_status(chart: PatientChart, as_of: Optional[date], appointment_id: Optional[str] = None) -> str:
    sentences = [_introduction(chart, as_of)]
    sentences += _treatment_sentences(chart, as_of)

    for sentence in (
        _prior_radiation_sentence(chart),
        _medication_sentence(chart, as_of),
        _latest_document_sentence("Most recent imaging", chart.radiology_reports, as_of),
        _latest_document_sentence("Most recent pathology", chart.pathology_reports, as_of),
    ):
        if sentence:
            sentences.append(sentence)

    facts = chart.eligibility_facts
    if facts.ecog is not None:
        sentences.append(f"ECOG performance status {facts.ecog}.")
    if facts.comorbidities:
        sentences.append("Comorbidities: " + ", ".join(facts.comorbidities) + ".")
    if facts.biomarkers:
        sentences.append("Biomarkers: " + ", ".join(f"{k} {v}" for k, v in sorted(facts.biomarkers.items())) + ".")

    visit, kind = _visit_sentences(chart, appointment_id)
    sentences += visit
    if kind == VisitKind.management:
        note = _progress_note_sentence(chart, as_of)
        if note:
            sentences.append(note)

    if prostate_diagnoses(chart):
        try:
            addendum = prostate_addendum(chart)
        except ClinicalRuleError as e:
            logger.info("Prostate addendum skipped for %s: %s", chart.patient_id, e)
            addendum = None
        if addendum:
            sentences.append(addendum)

    return " ".join(sentences)


def _json_block(text: str) -> str:
    return "```json\n" + json.dumps({SUMMARY_KEY: text}, ensure_ascii=False) + "\n```"


def _query_arguments(query: TrialQuery) -> Dict[str, Any]:
    return {
        "condition_terms": query.condition_terms,
        "intervention_terms": query.intervention_terms,
        "age_years": query.age_years,
        "sex": query.sex.value if query.sex else None,
    }


def _search_label(query: TrialQuery) -> str:
    conditions = " OR ".join(query.condition_terms)
    if not query.intervention_terms:
        return f"({conditions})"
    return f"({conditions}) AND ({' OR '.join(query.intervention_terms)})"


class RuleBackend:
    """
    Deterministic agent backend. Each reply is a pure function of the prompt
    and the transcript so far, so a run can be replayed step by step.
    """

    def __init__(self, institution: str = "Mayo Clinic", lexicon: Optional[Lexicon] = None):
        self.institution = institution
        self.lexicon = lexicon

    def next_message(self, transcript: AgentTranscript, prompt: PromptText) -> BackendMessage:
        patient_id = prompt.bindings.get("patient id") or transcript.patient_id or ""
        if prompt.template_id == TemplateId.clinical_summary:
            return self._summary(transcript, prompt, patient_id)
        return self._trials(transcript, prompt, patient_id)

    def _summary(self, transcript: AgentTranscript, prompt: PromptText, patient_id: str) -> BackendMessage:
        if not transcript.steps:
            return BackendMessage(text="Retrieving the patient's records.", tool_calls=summary_retrieval_calls(patient_id))

        results = transcript.steps[0].tool_results
        if all(is_error(r) or is_empty(r) for r in results):
            return BackendMessage(text=f"{_json_block(FALLBACK_SUMMARY)}\n{DONE}")

        chart, as_of, _ = chart_from_results(patient_id, prompt.bindings.get("patient name", patient_id), results)
        status = compose_status(chart, as_of, prompt.bindings.get("appointment id"))
        timeline = build_timeline(chart)
        text = (
            f"Timeline of important events for {chart.name}:\n\n{timeline.to_markdown()}\n\n"
            f"{_json_block(status)}\n{DONE}"
        )
        return BackendMessage(text=text)

    def _trials(self, transcript: AgentTranscript, prompt: PromptText, patient_id: str) -> BackendMessage:
        if not transcript.steps:
            return BackendMessage(text="Retrieving the patient's records.", tool_calls=trial_retrieval_calls(patient_id))

        lexicon = self.lexicon or default_lexicon()
        name = prompt.bindings.get("patient name", patient_id)
        chart, as_of, age = chart_from_results(patient_id, name, transcript.steps[0].tool_results)
        timeline = build_timeline(chart)
        if as_of is None and timeline.events:
            as_of = timeline.events[-1].date
        if age is None and as_of is not None:
            age = chart.age_on(as_of)

        def final(scenario: Scenario, shortlist=(), preface: str = "") -> BackendMessage:
            body = format_result(scenario, list(shortlist), chart.name, patient_id)
            return BackendMessage(text=f"{preface}{body}\n{DONE}")

        sex = chart.sex.value if chart.sex.value != "unknown" else None
        demographics = Demographics(age_years=age, sex=sex)
        if demographics.missing():
            return final(Scenario.demographics_missing)

        keywords = generate_keywords(timeline, chart, lexicon)
        if not keywords.conditions:
            return final(Scenario.none_found)

        combos = [expand_synonyms(combo, lexicon) for combo in make_combinations(keywords)]
        loop = SearchLoop(combos, demographics, self.institution)
        details: Dict[str, TrialRecord] = {}
        detailed = False

        for step in transcript.steps[1:]:
            for call, result in zip(step.tool_calls, step.tool_results):
                if call.tool_name == ToolName.get_list_of_clinical_trials:
                    loop.next_query()
                    if is_error(result):
                        logger.warning("Trial search failed for %s: %s", patient_id, result["error"])
                        return final(Scenario.search_error)
                    loop.absorb([TrialRecord.model_validate(trial) for trial in result.get("trials", [])])
                elif call.tool_name == ToolName.get_trial_details:
                    detailed = True
                    if not is_error(result):
                        record = TrialRecord.model_validate(result["trial"])
                        details[record.nct_id] = record

        if not detailed:
            query = loop.next_query()
            if query is not None:
                if loop.searches == 0:
                    preface = (
                        f"Timeline of important events for {chart.name}:\n\n{timeline.to_markdown()}\n\n"
                        "Conditions: " + ", ".join(f"{rank}. {term}" for term, rank in keywords.conditions) + "\n"
                        "Interventions: " + ", ".join(f"{rank}. {term}" for term, rank in keywords.interventions) + "\n"
                        f"Prepared {len(combos)} keyword combinations.\n"
                    )
                else:
                    last = loop.counts[-1]
                    preface = f"Search {loop.searches} found {last.new_unique} new trials ({last.cumulative} total).\n"
                text = f"{preface}Search {loop.searches + 1}: {_search_label(query)}"
                return BackendMessage(
                    text=text,
                    tool_calls=[_call(ToolName.get_list_of_clinical_trials, **_query_arguments(query))],
                )

            pool = loop.result()
            if not pool.trials:
                return final(Scenario.none_found)
            return BackendMessage(
                text=f"Evaluating {len(pool.trials)} candidate trials.",
                tool_calls=[_call(ToolName.get_trial_details, nct_id=nct_id) for nct_id in pool.nct_ids()],
            )

        searched = loop.result()
        pool = TrialPool(
            trials=[details.get(trial.nct_id, trial) for trial in searched.trials],
            searches_performed=searched.searches_performed,
            per_search_counts=searched.per_search_counts,
        )
        reports = {trial.nct_id: evaluate_eligibility(trial, chart, as_of) for trial in pool.trials}
        shortlist = filter_pool(pool, reports)
        if not shortlist:
            return final(Scenario.none_found)
        return final(Scenario.trials_found, shortlist)
