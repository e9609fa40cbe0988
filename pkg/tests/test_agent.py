import time

import pytest

from conftest import ROOT
from models.agent import BackendLimits, BackendMessage, TemplateId, ToolCall, ToolName
from util.agent import (
    ToolRegistry,
    _PLACEHOLDER,
    is_empty,
    is_error,
    load_template,
    render_prompt,
    run_agent,
    template_placeholders,
)
from util.errors import AgentError, UnboundPlaceholderError, UnknownTemplateError

BINDINGS = {"patient id": "P001", "patient name": "John Smith"}


@pytest.fixture
def tools(store, registry, run_date):
    return ToolRegistry(store, registry, run_date, "Mayo Clinic")


def call(tool, **arguments):
    return ToolCall(tool_name=tool, arguments=arguments)


@pytest.mark.parametrize("template", list(TemplateId))
def test_templates_are_stored_verbatim(template):
    stored = (ROOT / "prompts" / f"{template.value}.txt").read_bytes()
    assert load_template(template).encode("utf-8") == stored


def test_placeholders():
    assert template_placeholders(TemplateId.clinical_summary) == ["patient id"]
    assert template_placeholders(TemplateId.trial_evaluation) == ["patient id", "patient name"]


@pytest.mark.parametrize("template", list(TemplateId))
def test_rendering_only_touches_placeholders(template):
    body = load_template(template)
    prompt = render_prompt(template, BINDINGS)

    expected, position = [], 0
    for match in _PLACEHOLDER.finditer(body):
        expected.append(body[position : match.start()])
        expected.append(BINDINGS[" ".join(match.group(1).split())])
        position = match.end()
    expected.append(body[position:])

    assert prompt.text == "".join(expected)
    assert "physician_appointment[" not in prompt.text
    assert prompt.template_id == template


def test_unbound_placeholder():
    with pytest.raises(UnboundPlaceholderError):
        render_prompt(TemplateId.trial_evaluation, {"patient id": "P001"})


def test_unknown_template():
    with pytest.raises(UnknownTemplateError):
        render_prompt("discharge_summary", BINDINGS)


def test_patient_details_tool(tools):
    result = tools.dispatch(call(ToolName.get_patient_details, patient_id="P001"))

    assert result["tool"] == "get_patient_details"
    details = result["sections"][0]["items"][0]
    assert details["age_years"] == 67
    assert details["sex"] == "male"


def test_treatment_tool_carries_medications(tools):
    result = tools.dispatch(call(ToolName.get_treatment_details, patient_id="P001"))
    sections = {section["section"]: section for section in result["sections"]}

    assert sections["treatment_details"]["empty"]
    assert sections["medications"]["items"][0]["name"] == "tamsulosin"


def test_clinical_notes_by_specialty(tools):
    result = tools.dispatch(call(ToolName.get_clinical_notes, patient_id="P003", specialty="ENT"))
    assert result["sections"][0]["section"] == "notes_ent"
    assert not result["sections"][0]["empty"]


def test_empty_retrieval(tools):
    result = tools.dispatch(call(ToolName.get_diagnosis_details, patient_id="P010"))

    assert is_empty(result)
    assert not is_error(result)


@pytest.mark.parametrize(
    "tool,arguments,message",
    [
        (ToolName.get_patient_details, {"patient_id": "P999"}, "unknown patient: P999"),
        (ToolName.get_patient_details, {"patient_id": ""}, "invalid arguments"),
        (ToolName.get_patient_details, {"patient_id": "P001", "verbose": True}, "invalid arguments"),
        (ToolName.get_clinical_notes, {"patient_id": "P001", "specialty": "cardiology"}, "invalid arguments"),
        (ToolName.get_trial_details, {"nct_id": "NCT1"}, "malformed trial id"),
        (ToolName.get_trial_details, {"nct_id": "NCT99999999"}, "unknown trial"),
        (ToolName.get_list_of_clinical_trials, {"condition_terms": []}, "invalid arguments"),
    ],
)
def test_tool_failures_become_payloads(tools, tool, arguments, message):
    result = tools.dispatch(call(tool, **arguments))

    assert is_error(result)
    assert message in result["error"]
    assert result["tool"] == tool.value


def test_trial_search_tool(tools):
    result = tools.dispatch(
        call(
            ToolName.get_list_of_clinical_trials,
            condition_terms=["lung cancer"],
            intervention_terms=["radiation therapy"],
            age_years=73,
            sex="male",
        )
    )
    assert [trial["nct_id"] for trial in result["trials"]] == ["NCT00000014", "NCT00000015"]
    assert result["count"] == 2


def test_dispatch_all_keeps_call_order(store, registry, run_date):
    def slow_first(tool_call):
        if tool_call.arguments.get("patient_id") == "P001":
            time.sleep(0.05)

    tools = ToolRegistry(store, registry, run_date, "Mayo Clinic", before_call=slow_first)
    calls = [call(ToolName.get_patient_details, patient_id=pid) for pid in ("P001", "P002", "P003")]

    results = tools.dispatch_all(calls)

    assert [r["sections"][0]["patient_id"] for r in results] == ["P001", "P002", "P003"]


def test_schemas_cover_every_tool(tools):
    names = [schema["function"]["name"] for schema in tools.schemas()]
    assert names == [name.value for name in ToolName]


class ScriptedBackend:
    def __init__(self, *messages):
        self.messages = list(messages)
        self.seen_steps = []

    def next_message(self, transcript, prompt):
        self.seen_steps.append(len(transcript.steps))
        if len(self.messages) > 1:
            return self.messages.pop(0)
        return self.messages[0]


def test_run_stops_at_done(tools):
    backend = ScriptedBackend(
        BackendMessage(text="Looking.", tool_calls=[call(ToolName.get_patient_details, patient_id="P001")]),
        BackendMessage(text="Finished. <DONE>"),
    )
    prompt = render_prompt(TemplateId.clinical_summary, BINDINGS)

    transcript = run_agent(prompt, backend, tools)

    assert transcript.done_signal_seen and transcript.terminated and not transcript.aborted
    assert transcript.patient_id == "P001"
    assert len(transcript.steps) == 2
    assert transcript.steps[0].tool_results[0]["tool"] == "get_patient_details"
    assert transcript.final_message() == "Finished. <DONE>"
    assert backend.seen_steps == [0, 1]


def test_run_aborts_without_done(tools):
    backend = ScriptedBackend(BackendMessage(text="Still thinking. `<DONE>` comes later."))
    prompt = render_prompt(TemplateId.clinical_summary, BINDINGS)

    transcript = run_agent(prompt, backend, tools, BackendLimits(max_steps=3))

    assert transcript.aborted and transcript.terminated and not transcript.done_signal_seen
    assert transcript.abort_reason == "no <DONE> within 3 steps"
    assert len(transcript.steps) == 3


def test_calls_over_the_limit_are_dropped(tools):
    calls = [call(ToolName.get_patient_details, patient_id=f"P00{n}") for n in range(1, 6)]
    backend = ScriptedBackend(BackendMessage(text="<DONE>", tool_calls=calls))
    prompt = render_prompt(TemplateId.clinical_summary, BINDINGS)

    transcript = run_agent(prompt, backend, tools, BackendLimits(max_tool_calls_per_step=2))

    step = transcript.steps[0]
    assert step.dropped_calls == 3
    assert [c.arguments["patient_id"] for c in step.tool_calls] == ["P001", "P002"]
    assert len(step.tool_results) == 2


def test_backend_must_return_messages(tools):
    class Broken:
        def next_message(self, transcript, prompt):
            return "<DONE>"

    with pytest.raises(AgentError):
        run_agent(render_prompt(TemplateId.clinical_summary, BINDINGS), Broken(), tools)
