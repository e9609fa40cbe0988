import json
import logging
import re
import threading
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol

import requests
from pydantic import ValidationError

from models.run import RegistrySettings
from models.trial import (
    NCT_PATTERN,
    Criterion,
    CriterionPredicate,
    Polarity,
    PredicateKind,
    TrialQuery,
    TrialRecord,
    TrialSex,
    TrialStatus,
)
from util.errors import InvalidTrialIdError, RegistrySearchError, UnknownTrialError
from util.options import resolve

logger = logging.getLogger(__name__)

_NCT = re.compile(NCT_PATTERN)
_NON_WORD = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> List[str]:
    return _NON_WORD.sub(" ", text.lower()).split()


def term_matches(term: str, keyword: str) -> bool:
    """
    Whole-token match: the term's tokens occur contiguously in the keyword's tokens.
    """
    needle, haystack = tokenize(term), tokenize(keyword)
    if not needle:
        return False
    width = len(needle)
    return any(haystack[i : i + width] == needle for i in range(len(haystack) - width + 1))


def matches_any(terms: Iterable[str], keywords: Iterable[str]) -> bool:
    keywords = list(keywords)
    return any(term_matches(term, keyword) for term in terms for keyword in keywords)


def trial_matches(trial: TrialRecord, query: TrialQuery) -> bool:
    if trial.overall_status != TrialStatus.recruiting:
        return False
    institution = query.institution.casefold()
    if not any(location.casefold() == institution for location in trial.locations):
        return False
    if query.age_years is not None:
        if trial.min_age_years is not None and query.age_years < trial.min_age_years:
            return False
        if trial.max_age_years is not None and query.age_years > trial.max_age_years:
            return False
    if query.sex not in (None, TrialSex.all) and trial.sex not in (TrialSex.all, query.sex):
        return False
    if not matches_any(query.condition_terms, trial.conditions):
        return False
    if query.intervention_terms and not matches_any(query.intervention_terms, trial.interventions):
        return False
    return True


def check_nct_id(nct_id: str) -> str:
    if not isinstance(nct_id, str) or not _NCT.match(nct_id):
        raise InvalidTrialIdError(f"malformed trial id: {nct_id!r}")
    return nct_id


class TrialRegistry(Protocol):
    def search_trials(self, query: TrialQuery) -> List[TrialRecord]:
        ...

    def get_trial(self, nct_id: str) -> TrialRecord:
        ...


class FileRegistry:
    """
    Registry backed by a JSON array of trial records. Loaded once, on first use.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._trials: Optional[Dict[str, TrialRecord]] = None
        self._lock = threading.Lock()

    def _load(self) -> Dict[str, TrialRecord]:
        with self._lock:
            if self._trials is not None:
                return self._trials
            try:
                with open(self.path, "r", encoding="utf-8") as file:
                    documents = json.load(file)
            except OSError as e:
                raise RegistrySearchError(f"registry file unreadable: {e}")
            except json.JSONDecodeError as e:
                raise RegistrySearchError(f"{self.path}:{e.lineno}: {e.msg}")

            if not isinstance(documents, list):
                raise RegistrySearchError(f"{self.path}: expected an array of trials")

            trials: Dict[str, TrialRecord] = {}
            for position, document in enumerate(documents):
                try:
                    trial = TrialRecord.model_validate(document)
                except ValidationError as e:
                    raise RegistrySearchError(f"{self.path}: trial #{position} invalid: {e.errors()[0]['msg']}")
                if trial.nct_id in trials:
                    raise RegistrySearchError(f"{self.path}: duplicate trial {trial.nct_id}")
                trials[trial.nct_id] = trial

            logger.info("Loaded %d trials from %s", len(trials), self.path)
            self._trials = trials
            return trials

    def all_trials(self) -> List[TrialRecord]:
        return [self._load()[key] for key in sorted(self._load())]

    def search_trials(self, query: TrialQuery) -> List[TrialRecord]:
        return [trial for trial in self.all_trials() if trial_matches(trial, query)]

    def get_trial(self, nct_id: str) -> TrialRecord:
        check_nct_id(nct_id)
        try:
            return self._load()[nct_id]
        except KeyError:
            raise UnknownTrialError(nct_id)


_STATUS = {
    "RECRUITING": TrialStatus.recruiting,
    "ACTIVE_NOT_RECRUITING": TrialStatus.active_not_recruiting,
    "COMPLETED": TrialStatus.completed,
}

_AGE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(year|month|week|day)s?\s*$", re.IGNORECASE)
_AGE_UNITS = {"year": 1.0, "month": 1 / 12, "week": 7 / 365.25, "day": 1 / 365.25}


def parse_age(text: Optional[str]) -> Optional[float]:
    if not text:
        return None
    match = _AGE.match(text)
    if not match:
        return None
    return round(float(match.group(1)) * _AGE_UNITS[match.group(2).lower()], 2)


def eligibility_lines(text: str):
    """
    Splits registry eligibility text into (polarity, line) pairs using its
    Inclusion/Exclusion headings.
    """
    polarity = Polarity.inclusion
    for raw in (text or "").splitlines():
        line = raw.strip()
        if not line:
            continue
        lowered = line.lower().rstrip(":")
        if lowered.startswith("inclusion criteria"):
            polarity = Polarity.inclusion
            continue
        if lowered.startswith("exclusion criteria"):
            polarity = Polarity.exclusion
            continue
        line = re.sub(r"^(?:[*\-•]|\d+[.)])\s*", "", line)
        if line:
            yield polarity, line


def study_to_record(study: dict) -> TrialRecord:
    protocol = study.get("protocolSection", {})
    identification = protocol.get("identificationModule", {})
    eligibility = protocol.get("eligibilityModule", {})
    nct_id = identification.get("nctId", "")

    min_age = parse_age(eligibility.get("minimumAge"))
    max_age = parse_age(eligibility.get("maximumAge"))
    sex = {"FEMALE": TrialSex.female, "MALE": TrialSex.male}.get(eligibility.get("sex", "ALL"), TrialSex.all)

    criteria: List[Criterion] = []
    if min_age is not None or max_age is not None:
        criteria.append(
            Criterion(
                criterion_id="age",
                description=f"Age {eligibility.get('minimumAge', 'any')} to {eligibility.get('maximumAge', 'any')}",
                polarity=Polarity.inclusion,
                predicate=CriterionPredicate(kind=PredicateKind.age_range, min_years=min_age, max_years=max_age),
            )
        )
    if sex != TrialSex.all:
        criteria.append(
            Criterion(
                criterion_id="sex",
                description=f"Sex: {sex.value}",
                polarity=Polarity.inclusion,
                predicate=CriterionPredicate(kind=PredicateKind.sex, sex=sex),
            )
        )
    for position, (polarity, line) in enumerate(eligibility_lines(eligibility.get("eligibilityCriteria", "")), start=1):
        criteria.append(
            Criterion(
                criterion_id=f"{polarity.value[:3]}-{position:02d}",
                description=line,
                polarity=polarity,
                predicate=CriterionPredicate(kind=PredicateKind.free_text, text=line),
            )
        )

    interventions = []
    for intervention in protocol.get("armsInterventionsModule", {}).get("interventions", []):
        interventions.append(intervention.get("name", ""))
        interventions.extend(intervention.get("otherNames", []))
    conditions_module = protocol.get("conditionsModule", {})

    return TrialRecord(
        nct_id=nct_id,
        title=identification.get("briefTitle") or identification.get("officialTitle") or nct_id,
        overall_status=_STATUS.get(protocol.get("statusModule", {}).get("overallStatus", ""), TrialStatus.other),
        locations=sorted(
            {
                location["facility"]
                for location in protocol.get("contactsLocationsModule", {}).get("locations", [])
                if location.get("facility")
            }
        ),
        conditions=conditions_module.get("conditions", []) + conditions_module.get("keywords", []),
        interventions=[name for name in interventions if name],
        min_age_years=min_age,
        max_age_years=max_age,
        sex=sex,
        criteria=criteria,
        url=f"https://clinicaltrials.gov/study/{nct_id}",
    )


class HttpRegistry:
    """
    Client for a clinicaltrials.gov v2 shaped API. Results are re-checked
    locally with the same whole-token rules the file registry uses.
    """

    def __init__(self, settings: RegistrySettings, session: Optional[requests.Session] = None):
        self.settings = settings
        self.session = session or requests.Session()
        self._in_flight = threading.BoundedSemaphore(settings.max_in_flight)

    def _get(self, url: str, params: Optional[dict] = None) -> requests.Response:
        with self._in_flight:
            try:
                response = self.session.get(url, params=params, timeout=self.settings.timeout_seconds)
            except requests.RequestException as e:
                raise RegistrySearchError(f"registry unreachable: {e}")
        return response

    def search_trials(self, query: TrialQuery) -> List[TrialRecord]:
        params = {
            "query.cond": " OR ".join(query.condition_terms),
            "filter.overallStatus": "RECRUITING",
            "query.locn": query.institution,
            "pageSize": self.settings.page_size,
            "format": "json",
        }
        if query.intervention_terms:
            params["query.intr"] = " OR ".join(query.intervention_terms)

        found: Dict[str, TrialRecord] = {}
        token = None
        while len(found) < self.settings.result_cap:
            page_params = dict(params, pageToken=token) if token else params
            response = self._get(f"{self.settings.base_url}/studies", page_params)
            if response.status_code != 200:
                raise RegistrySearchError(f"registry answered HTTP {response.status_code}")
            try:
                body = response.json()
                for study in body.get("studies", []):
                    record = study_to_record(study)
                    found.setdefault(record.nct_id, record)
            except (ValueError, AttributeError) as e:
                raise RegistrySearchError(f"registry response unreadable: {e}")
            token = body.get("nextPageToken")
            if not token:
                break

        records = sorted(found.values(), key=lambda trial: trial.nct_id)[: self.settings.result_cap]
        return [trial for trial in records if trial_matches(trial, query)]

    def get_trial(self, nct_id: str) -> TrialRecord:
        check_nct_id(nct_id)
        response = self._get(f"{self.settings.base_url}/studies/{nct_id}", {"format": "json"})
        if response.status_code == 404:
            raise UnknownTrialError(nct_id)
        if response.status_code != 200:
            raise RegistrySearchError(f"registry answered HTTP {response.status_code}")
        try:
            return study_to_record(response.json())
        except (ValueError, AttributeError) as e:
            raise RegistrySearchError(f"registry response unreadable: {e}")


def build_registry(settings: RegistrySettings) -> TrialRegistry:
    if settings.mode == "http":
        return HttpRegistry(settings)
    return FileRegistry(resolve(settings.path))
