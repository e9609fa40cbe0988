from datetime import datetime
from typing import List, Optional

from pydantic import BaseModel


class PublicContact(BaseModel):
    name: str
    email: str


class InfoModel(BaseModel):
    name: Optional[str] = "The Daily Dose"
    description: Optional[str] = None
    institution: Optional[str] = None
    credits: List[PublicContact]


class HealthModel(BaseModel):
    status: str = "ok"
    timezone: str
    next_run: datetime


class ValidationModel(BaseModel):
    cohort: str
    ok: bool
    findings: List[str] = []
