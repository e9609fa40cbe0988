import logging
import re
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from functools import lru_cache
from typing import Any, Callable, Dict, List, Mapping, Optional, Protocol

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from models.agent import (
    AgentStep,
    AgentTranscript,
    BackendLimits,
    BackendMessage,
    PromptText,
    TemplateId,
    ToolCall,
    ToolName,
)
from models.chart import Specialty
from models.trial import TrialQuery, TrialSex
from util.ehr import CohortStore, EhrSection, NOTE_SECTIONS, get_section
from util.errors import AgentError, UnboundPlaceholderError, UnknownTemplateError, UnknownToolError
from util.options import resolve
from util.parsing import detect_done
from util.registry import TrialRegistry

logger = logging.getLogger(__name__)

TEMPLATE_FILES = {
    TemplateId.clinical_summary: "prompts/clinical_summary.txt",
    TemplateId.trial_evaluation: "prompts/trial_evaluation.txt",
}

# Placeholder names may be wrapped across lines in the template body.
_PLACEHOLDER = re.compile(r'\{physician_appointment\["([^"]+)"\]\}')


def _placeholder_name(raw: str) -> str:
    return " ".join(raw.split())


@lru_cache(maxsize=None)
def load_template(template_id: TemplateId) -> str:
    # newline="" keeps the bytes exactly as stored.
    with open(resolve(TEMPLATE_FILES[template_id]), "r", encoding="utf-8", newline="") as file:
        return file.read()


def template_placeholders(template_id) -> List[str]:
    body = load_template(TemplateId(template_id))
    names = []
    for match in _PLACEHOLDER.finditer(body):
        name = _placeholder_name(match.group(1))
        if name not in names:
            names.append(name)
    return names


def render_prompt(template_id, bindings: Mapping[str, str]) -> PromptText:
    try:
        template_id = TemplateId(template_id)
    except ValueError:
        raise UnknownTemplateError(f"unknown prompt template: {template_id}")

    for name in template_placeholders(template_id):
        if name not in bindings:
            raise UnboundPlaceholderError(name)

    text = _PLACEHOLDER.sub(lambda match: bindings[_placeholder_name(match.group(1))], load_template(template_id))
    return PromptText(template_id=template_id, text=text, bindings=dict(bindings))


class PatientArgs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    patient_id: str = Field(min_length=1)


class NotesArgs(PatientArgs):
    specialty: Specialty


class TrialSearchArgs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    condition_terms: List[str] = Field(min_length=1)
    intervention_terms: List[str] = []
    age_years: Optional[float] = None
    sex: Optional[TrialSex] = None


class TrialDetailArgs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nct_id: str


TOOL_ARGUMENTS = {
    ToolName.get_patient_details: PatientArgs,
    ToolName.get_treatment_details: PatientArgs,
    ToolName.get_diagnosis_details: PatientArgs,
    ToolName.get_appointments: PatientArgs,
    ToolName.get_radiology_reports: PatientArgs,
    ToolName.get_pathology_reports: PatientArgs,
    ToolName.get_clinical_notes: NotesArgs,
    ToolName.get_list_of_clinical_trials: TrialSearchArgs,
    ToolName.get_trial_details: TrialDetailArgs,
}

# The prompts' retrieval list has no medication or lab tool, so those
# sections travel with treatment and diagnosis details.
TOOL_SECTIONS = {
    ToolName.get_patient_details: [EhrSection.patient_details],
    ToolName.get_treatment_details: [EhrSection.treatment_details, EhrSection.medications],
    ToolName.get_diagnosis_details: [EhrSection.diagnosis_details, EhrSection.labs],
    ToolName.get_appointments: [EhrSection.appointments_today],
    ToolName.get_radiology_reports: [EhrSection.radiology_reports],
    ToolName.get_pathology_reports: [EhrSection.pathology_reports],
}

SPECIALTY_SECTIONS = {specialty: section for section, specialty in NOTE_SECTIONS.items()}


def is_error(payload: Any) -> bool:
    return isinstance(payload, dict) and "error" in payload


def is_empty(payload: Any) -> bool:
    """
    A retrieval payload with no content in any of its sections.
    """
    if not isinstance(payload, dict) or "sections" not in payload:
        return False
    return all(section.get("empty", True) for section in payload["sections"])


class ToolRegistry:
    """
    Executes agent tool calls against the cohort store and trial registry.
    Failures come back as {"error": ..., "tool": ...} payloads.
    """

    def __init__(
        self,
        store: CohortStore,
        registry: TrialRegistry,
        run_date: date,
        institution: str,
        before_call: Optional[Callable[[ToolCall], None]] = None,
    ):
        self.store = store
        self.registry = registry
        self.run_date = run_date
        self.institution = institution
        self.before_call = before_call

    def names(self) -> List[ToolName]:
        return list(TOOL_ARGUMENTS)

    def schemas(self) -> List[Dict[str, Any]]:
        return [
            {
                "type": "function",
                "function": {"name": name.value, "parameters": model.model_json_schema()},
            }
            for name, model in TOOL_ARGUMENTS.items()
        ]

    def _sections(self, patient_id: str, sections: List[EhrSection]) -> Dict[str, Any]:
        payloads = [get_section(self.store, patient_id, section, self.run_date) for section in sections]
        return {"sections": [payload.model_dump(mode="json") for payload in payloads]}

    def _execute(self, call: ToolCall) -> Dict[str, Any]:
        model = TOOL_ARGUMENTS.get(call.tool_name)
        if model is None:
            raise UnknownToolError(f"unknown tool: {call.tool_name}")
        args = model.model_validate(call.arguments)

        if call.tool_name in TOOL_SECTIONS:
            return self._sections(args.patient_id, TOOL_SECTIONS[call.tool_name])
        if call.tool_name == ToolName.get_clinical_notes:
            return self._sections(args.patient_id, [SPECIALTY_SECTIONS[args.specialty]])
        if call.tool_name == ToolName.get_list_of_clinical_trials:
            query = TrialQuery(
                condition_terms=args.condition_terms,
                intervention_terms=args.intervention_terms,
                age_years=args.age_years,
                sex=args.sex,
                institution=self.institution,
            )
            trials = self.registry.search_trials(query)
            return {"trials": [trial.model_dump(mode="json") for trial in trials], "count": len(trials)}
        return {"trial": self.registry.get_trial(args.nct_id).model_dump(mode="json")}

    def dispatch(self, call: ToolCall) -> Dict[str, Any]:
        try:
            if self.before_call is not None:
                self.before_call(call)
            payload = self._execute(call)
        except ValidationError as e:
            logger.info("Rejected arguments for %s: %s", call.tool_name.value, e.errors()[0]["msg"])
            return {"error": f"invalid arguments: {e.errors()[0]['msg']}", "tool": call.tool_name.value}
        except Exception as e:
            logger.warning("Tool %s failed: %s", call.tool_name.value, e)
            return {"error": str(e) or type(e).__name__, "tool": call.tool_name.value}
        return {"tool": call.tool_name.value, **payload}

    def dispatch_all(self, calls: List[ToolCall]) -> List[Dict[str, Any]]:
        if not calls:
            return []
        # Executed concurrently, returned in call order.
        with ThreadPoolExecutor(max_workers=min(len(calls), 8)) as pool:
            return list(pool.map(self.dispatch, calls))


class AgentBackend(Protocol):
    def next_message(self, transcript: AgentTranscript, prompt: PromptText) -> BackendMessage:
        ...


def run_agent(
    prompt: PromptText,
    backend: AgentBackend,
    tools: ToolRegistry,
    limits: BackendLimits = BackendLimits(),
) -> AgentTranscript:
    transcript = AgentTranscript(template_id=prompt.template_id, patient_id=prompt.bindings.get("patient id"))

    for _ in range(limits.max_steps):
        message = backend.next_message(transcript, prompt)
        if not isinstance(message, BackendMessage):
            raise AgentError(f"backend returned {type(message).__name__}, expected BackendMessage")

        calls = list(message.tool_calls)
        dropped = max(0, len(calls) - limits.max_tool_calls_per_step)
        if dropped:
            logger.warning("Dropping %d tool calls over the per-step limit of %d", dropped, limits.max_tool_calls_per_step)
            calls = calls[: limits.max_tool_calls_per_step]

        transcript.steps.append(
            AgentStep(
                agent_message=message.text,
                tool_calls=calls,
                tool_results=tools.dispatch_all(calls),
                dropped_calls=dropped,
            )
        )

        if detect_done(message.text):
            transcript.done_signal_seen = True
            transcript.terminated = True
            return transcript

    transcript.terminated = True
    transcript.aborted = True
    transcript.abort_reason = f"no <DONE> within {limits.max_steps} steps"
    logger.warning("Agent run for %s aborted: %s", transcript.patient_id, transcript.abort_reason)
    return transcript
