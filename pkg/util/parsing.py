import json
import re
from typing import List, Optional

from models.results import AnalysisSummary, Scenario, SummaryPayload, TrialEntry
from util.errors import MissingScopeError, NoSummaryError, SummaryTypeError, UnparseableSummaryError

SUMMARY_KEY = "patient_status_summary"
OPEN_SCOPE = "<ANALYSIS_SUMMARY>"
CLOSE_SCOPE = "</ANALYSIS_SUMMARY>"
DONE = "<DONE>"

_FENCED_BLOCK = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_ANY_FENCE = re.compile(r"```.*?(?:```|\Z)", re.DOTALL)
_INLINE_CODE = re.compile(r"`[^`\n]*`")

# Checked in order against the lines above the first trial heading only;
# titles and criteria below it are registry text.
SENTINELS = [
    ("An error occurred when searching", Scenario.search_error),
    ("age and sex could not be retrieved", Scenario.demographics_missing),
    ("No relevant clinical trials were found", Scenario.none_found),
    ("is potentially eligible to participate", Scenario.trials_found),
]

_HEADING = re.compile(r"Clinical Trials Eligibility Summary for (.+)")
_ENTRY = re.compile(r"^#### \d+\.\s*\*\*(NCT\d{8})\*\*\s*$", re.MULTILINE)
_FIELDS = {
    name: re.compile(rf"^[ \t]*-[ \t]*\*\*{label}:\*\*[ \t]*(.*?)[ \t]*$", re.MULTILINE)
    for name, label in (
        ("title", "Title"),
        ("met_summary", "Met"),
        ("unknown_summary", "Unknown"),
        ("not_applicable_summary", "Not Applicable"),
        ("url", "URL"),
    )
}
_MARKDOWN_LINK = re.compile(r"^\[[^\]]*\]\((.*)\)$")


def _objects_in(block: str):
    decoder = json.JSONDecoder()
    position = block.find("{")
    while position != -1:
        try:
            value, _ = decoder.raw_decode(block, position)
        except ValueError:
            value = None
        if isinstance(value, dict):
            yield value
        position = block.find("{", position + 1)


def extract_json_summary(text: str) -> SummaryPayload:
    """
    Returns the `patient_status_summary` of the last fenced JSON object that has one.
    """
    found = None
    for block in _FENCED_BLOCK.findall(text or ""):
        for candidate in _objects_in(block):
            if SUMMARY_KEY in candidate:
                found = candidate

    if found is None:
        raise NoSummaryError(f"no fenced block carries {SUMMARY_KEY!r}")

    value = found[SUMMARY_KEY]
    if not isinstance(value, str):
        raise SummaryTypeError(f"{SUMMARY_KEY} must be a string, got {type(value).__name__}")

    return SummaryPayload.of(value)


def _clean_url(value: str) -> str:
    value = value.strip()
    link = _MARKDOWN_LINK.match(value)
    if link:
        value = link.group(1)
    return value.strip("<>").strip()


def _parse_entries(region: str) -> List[TrialEntry]:
    matches = list(_ENTRY.finditer(region))
    entries = []
    for index, match in enumerate(matches):
        end = matches[index + 1].start() if index + 1 < len(matches) else len(region)
        chunk = region[match.end() : end]
        fields = {}
        for name, pattern in _FIELDS.items():
            found = pattern.search(chunk)
            if found is None:
                raise UnparseableSummaryError(f"trial {match.group(1)} has no {name}", region)
            fields[name] = found.group(1)
        fields["url"] = _clean_url(fields["url"])
        entries.append(TrialEntry(nct_id=match.group(1), **fields))
    return entries


def _scope(text: str) -> str:
    start = text.rfind(OPEN_SCOPE)
    if start == -1:
        raise MissingScopeError(f"no {OPEN_SCOPE} scope in text")
    start += len(OPEN_SCOPE)
    end = text.find(CLOSE_SCOPE, start)
    # A missing close tag is tolerated; the region then runs to the end.
    return text[start:] if end == -1 else text[start:end]


def extract_analysis_summary(text: str) -> AnalysisSummary:
    region = _scope(text or "")
    first = _ENTRY.search(region)
    preamble = region[: first.start()] if first else region
    flat = " ".join(preamble.split())

    scenario: Optional[Scenario] = None
    for phrase, candidate in SENTINELS:
        if phrase in flat:
            scenario = candidate
            break
    if scenario is None:
        raise UnparseableSummaryError("no scenario phrase in analysis summary", region)

    heading = _HEADING.search(preamble)
    name = heading.group(1).strip() if heading else ""

    entries = _parse_entries(region) if scenario == Scenario.trials_found else []
    if scenario == Scenario.trials_found and not entries:
        raise UnparseableSummaryError("trials were announced but none are listed", region)

    return AnalysisSummary(scenario=scenario, entries=entries, patient_display_name=name)


def detect_done(text: str) -> bool:
    """
    True when <DONE> appears outside fenced blocks and inline code spans.
    """
    if not text:
        return False
    visible = _INLINE_CODE.sub("", _ANY_FENCE.sub("", text))
    return DONE in visible
