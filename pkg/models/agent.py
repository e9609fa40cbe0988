from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TemplateId(str, Enum):
    clinical_summary = "clinical_summary"
    trial_evaluation = "trial_evaluation"


class ToolName(str, Enum):
    get_patient_details = "get_patient_details"
    get_treatment_details = "get_treatment_details"
    get_diagnosis_details = "get_diagnosis_details"
    get_appointments = "get_appointments"
    get_radiology_reports = "get_radiology_reports"
    get_pathology_reports = "get_pathology_reports"
    get_clinical_notes = "get_clinical_notes"
    get_list_of_clinical_trials = "get_list_of_clinical_trials"
    get_trial_details = "get_trial_details"


class PromptText(BaseModel):
    model_config = ConfigDict(frozen=True)

    template_id: TemplateId
    text: str
    bindings: Dict[str, str] = {}


class ToolCall(BaseModel):
    model_config = ConfigDict(frozen=True)

    tool_name: ToolName
    arguments: Dict[str, Any] = {}


class BackendMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    tool_calls: List[ToolCall] = []


class AgentStep(BaseModel):
    agent_message: str
    tool_calls: List[ToolCall] = []
    tool_results: List[Any] = []
    dropped_calls: int = 0

    @model_validator(mode="after")
    def results_line_up(self):
        if len(self.tool_results) != len(self.tool_calls):
            raise ValueError("every tool call needs exactly one result")
        return self


class AgentTranscript(BaseModel):
    template_id: TemplateId
    patient_id: Optional[str] = None
    steps: List[AgentStep] = []
    terminated: bool = False
    done_signal_seen: bool = False
    aborted: bool = False
    abort_reason: Optional[str] = None

    def final_message(self) -> str:
        return self.steps[-1].agent_message if self.steps else ""

    def tool_calls(self) -> List[ToolCall]:
        return [call for step in self.steps for call in step.tool_calls]


class BackendLimits(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_steps: int = Field(default=40, ge=1)
    max_tool_calls_per_step: int = Field(default=16, ge=1)
    deterministic: bool = True
