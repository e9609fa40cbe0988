import logging
from datetime import date
from functools import lru_cache
from typing import List, Optional, Union

import commonmark
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from models.chart import Appointment, PhysicianProfile
from models.digest import (
    SUMMARY_PLACEHOLDER,
    TRIALS_PLACEHOLDER,
    DigestDocument,
    DigestEntry,
    Placeholder,
)
from models.results import AnalysisSummary, Scenario, SummaryPayload
from models.run import DigestSettings
from util.errors import DigestError
from util.options import resolve

logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def _environment() -> Environment:
    # Markdown output, so no HTML autoescaping here; commonmark escapes on render.
    return Environment(
        loader=FileSystemLoader(str(resolve("templates"))),
        autoescape=False,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
        undefined=StrictUndefined,
    )


def make_entry(
    appointment: Appointment,
    patient_name: str,
    summary: Union[SummaryPayload, Placeholder, None],
    trials: Union[AnalysisSummary, Placeholder, None],
    settings: DigestSettings = DigestSettings(),
) -> DigestEntry:
    """
    A digest block for one appointment. A missing summary becomes the
    standard placeholder.
    """
    if summary is None:
        summary = Placeholder(text=SUMMARY_PLACEHOLDER)
    entry = DigestEntry(
        appointment=appointment,
        patient_name=patient_name,
        indicator=settings.indicators[appointment.visit_kind],
        summary=summary,
        trials=trials,
    )
    if trials is None:
        return entry
    return entry.model_copy(update={"trials_markdown": render_trials(trials, patient_name)})


def render_trials(trials: Union[AnalysisSummary, Placeholder], patient_name: str) -> str:
    if isinstance(trials, Placeholder):
        return trials.text

    name = trials.patient_display_name or patient_name
    if trials.scenario == Scenario.none_found:
        return f"No relevant clinical trials were found for {name}."
    if trials.scenario == Scenario.demographics_missing:
        return f"Clinical trial eligibility could not be evaluated for {name} because their age and sex could not be retrieved."
    if trials.scenario == Scenario.search_error:
        return f"An error occurred when searching for clinical trials for {name}."

    lines = [f"{name} is potentially eligible for the following clinical trials:", ""]
    for number, entry in enumerate(trials.entries, start=1):
        lines += [
            f"{number}. **{entry.nct_id}**: {entry.title}",
            f"    - Met: {entry.met_summary}",
            f"    - Unknown: {entry.unknown_summary}",
            f"    - Not applicable: {entry.not_applicable_summary}",
            f"    - <{entry.url}>",
        ]
    return "\n".join(lines)


def greeting_for(physician: PhysicianProfile, run_date: date, appointments: int) -> str:
    day = f"{run_date:%A}, {run_date:%B} {run_date.day}, {run_date.year}"
    plural = "appointment" if appointments == 1 else "appointments"
    return f"Good morning, {physician.name}. Here is your Daily Dose for {day}: {appointments} {plural} on your schedule."


def closing_for(settings: DigestSettings) -> str:
    return (
        f"Questions or problems? Contact {settings.contact_email}.\n\n"
        f"Tell us what you think: <{settings.feedback_link}>\n\n"
        f"{settings.sender_name}"
    )


def render_markdown(digest: DigestDocument, settings: DigestSettings = DigestSettings()) -> str:
    blocks = [
        {
            "time": entry.appointment.start_time.strftime("%H:%M"),
            "indicator": entry.indicator,
            "label": entry.appointment.raw_type_label,
            "patient_name": entry.patient_name,
            "patient_id": entry.appointment.patient_id,
            "summary": entry.summary.text,
            "trials": entry.trials_markdown if entry.trials is not None else None,
        }
        for entry in digest.entries
    ]
    return _environment().get_template("digest.md.j2").render(
        sender_name=settings.sender_name,
        greeting=digest.greeting,
        blocks=blocks,
        closing=digest.closing,
    )


def render_html(markdown: str) -> str:
    parser = commonmark.Parser()
    renderer = commonmark.HtmlRenderer()
    return renderer.render(parser.parse(markdown))


def build_digest(
    physician: PhysicianProfile,
    run_date: date,
    entries: List[DigestEntry],
    settings: DigestSettings = DigestSettings(),
) -> DigestDocument:
    for entry in entries:
        appointment = entry.appointment
        if appointment.physician_id != physician.physician_id:
            raise DigestError(f"appointment {appointment.appointment_id} belongs to {appointment.physician_id}, not {physician.physician_id}")
        if appointment.start_time.date() != run_date:
            raise DigestError(f"appointment {appointment.appointment_id} is not on {run_date.isoformat()}")
    if not entries:
        raise DigestError(f"no appointments for {physician.physician_id} on {run_date.isoformat()}")

    ordered = sorted(entries, key=lambda e: (e.appointment.start_time, e.appointment.appointment_id))
    draft = DigestDocument(
        physician=physician,
        run_date=run_date,
        greeting=greeting_for(physician, run_date, len(ordered)),
        entries=ordered,
        closing=closing_for(settings),
        markdown_source="",
        html_rendered="",
    )
    markdown = render_markdown(draft, settings)
    logger.debug("Built digest for %s with %d entries", physician.physician_id, len(ordered))
    return draft.model_copy(update={"markdown_source": markdown, "html_rendered": render_html(markdown)})


def trials_placeholder(error: Optional[BaseException] = None) -> Placeholder:
    return Placeholder(text=TRIALS_PLACEHOLDER, error=str(error) if error else "")


def summary_placeholder(error: Optional[BaseException] = None) -> Placeholder:
    return Placeholder(text=SUMMARY_PLACEHOLDER, error=str(error) if error else "")
