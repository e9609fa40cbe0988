from enum import Enum
from typing import Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Domain(str, Enum):
    demographics = "demographics"
    usage = "usage"
    usability_satisfaction = "usability_satisfaction"
    usefulness = "usefulness"
    impact_future = "impact_future"


LIKERT_DOMAINS = [Domain.usability_satisfaction, Domain.usefulness, Domain.impact_future]


class ItemKind(str, Enum):
    likert = "likert"
    mcq = "mcq"


class SurveyItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    item_id: str
    domain: Domain
    kind: ItemKind = ItemKind.likert
    text: str = ""
    # Ordered answer codes for MCQ items.
    categories: List[str] = []


class TestResult(BaseModel):
    model_config = ConfigDict(frozen=True)
    __test__ = False

    statistic_name: Literal["alpha", "rho", "U", "H"]
    statistic_value: float
    p_value: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    n_used: int = Field(ge=0)
    method_note: str = ""

    @model_validator(mode="after")
    def tests_carry_p(self):
        if self.statistic_name != "alpha" and self.p_value is None:
            raise ValueError(f"{self.statistic_name} needs a p-value")
        return self


class DomainScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    domain: Domain
    per_respondent: Dict[str, float]
    mean: float
    sd: float
    n: int


class ResponseMatrix(BaseModel):
    """
    Respondents by items. Missing cells are NaN (Likert) or None (MCQ).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    items: List[SurveyItem]
    frame: pd.DataFrame
    # Which item plays which part in the report, e.g. {"time_saved": "us2"}.
    roles: Dict[str, str] = {}

    @model_validator(mode="after")
    def cells_in_range(self):
        for role, item_id in self.roles.items():
            if item_id not in self.frame.columns:
                raise ValueError(f"role {role} names unknown item {item_id}")
        ids = [item.item_id for item in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("item ids must be unique")
        if list(self.frame.columns) != ids:
            raise ValueError("frame columns must match the item list")
        if self.frame.index.has_duplicates:
            raise ValueError("respondent ids must be unique")
        for item in self.items:
            column = self.frame[item.item_id]
            if item.kind == ItemKind.likert:
                values = pd.to_numeric(column, errors="coerce")
                if values.isna().ne(column.isna()).any():
                    raise ValueError(f"{item.item_id}: Likert answers must be numeric")
                present = values.dropna()
                if not present.isin([1, 2, 3, 4, 5]).all():
                    raise ValueError(f"{item.item_id}: Likert answers must be 1-5")
            elif item.categories:
                present = column.dropna()
                unknown = set(present) - set(item.categories)
                if unknown:
                    raise ValueError(f"{item.item_id}: unknown answer codes {sorted(map(str, unknown))}")
        return self

    @property
    def respondents(self) -> List[str]:
        return [str(r) for r in self.frame.index]

    def item(self, item_id: str) -> SurveyItem:
        for item in self.items:
            if item.item_id == item_id:
                return item
        raise KeyError(item_id)

    def domain_items(self, domain: Domain) -> List[SurveyItem]:
        return [item for item in self.items if item.domain == Domain(domain)]

    def likert(self, domain: Optional[Domain] = None) -> pd.DataFrame:
        """
        The Likert block as floats, optionally restricted to one domain.
        """
        items = [
            item.item_id
            for item in self.items
            if item.kind == ItemKind.likert and (domain is None or item.domain == Domain(domain))
        ]
        return self.frame[items].apply(pd.to_numeric, errors="coerce").astype(np.float64)
