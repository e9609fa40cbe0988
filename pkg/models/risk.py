import math
from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.chart import MStage, NStage, TStage


class RiskCategory(str, Enum):
    low = "low"
    intermediate_favorable = "intermediate_favorable"
    intermediate_unfavorable = "intermediate_unfavorable"
    high = "high"
    very_high = "very_high"

    def phrase(self) -> str:
        return {
            RiskCategory.low: "low",
            RiskCategory.intermediate_favorable: "favorable intermediate",
            RiskCategory.intermediate_unfavorable: "unfavorable intermediate",
            RiskCategory.high: "high",
            RiskCategory.very_high: "very high",
        }[self]


RISK_ORDER = [
    RiskCategory.low,
    RiskCategory.intermediate_favorable,
    RiskCategory.intermediate_unfavorable,
    RiskCategory.high,
    RiskCategory.very_high,
]


class ProstateInputs(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_stage: TStage
    n_stage: NStage
    m_stage: MStage
    gleason_primary: int = Field(ge=1, le=5)
    gleason_secondary: int = Field(ge=1, le=5)
    psa_ng_ml: float = Field(ge=0)
    cores_positive: int = Field(ge=0)
    cores_total: int = Field(gt=0)

    @field_validator("psa_ng_ml")
    @classmethod
    def finite(cls, value):
        if not math.isfinite(value):
            raise ValueError("PSA must be finite")
        return value

    @model_validator(mode="after")
    def check_cores(self):
        if self.cores_positive > self.cores_total:
            raise ValueError("cores_positive exceeds cores_total")
        return self

    @property
    def gleason_sum(self) -> int:
        return self.gleason_primary + self.gleason_secondary


class RiskAssessment(BaseModel):
    model_config = ConfigDict(frozen=True)

    category: RiskCategory
    triggered_factors: List[str] = []
    explanation: str

    @model_validator(mode="after")
    def factors_present(self):
        if self.category != RiskCategory.low and not self.triggered_factors:
            raise ValueError("non-low categories must name their factors")
        return self
