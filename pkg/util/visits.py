from functools import lru_cache
from typing import List, Tuple

from models.chart import VisitKind, is_trial_eligible_visit  # noqa: F401
from util.options import Options


@lru_cache(maxsize=None)
def visit_rules() -> Tuple[Tuple[str, VisitKind], ...]:
    table = Options.get_lexicon("visit_kinds")
    return tuple((row["keyword"].casefold(), VisitKind(row["kind"])) for row in table.get("rules", []))


def classify_visit_kind(raw_type_label: str, rules: List[Tuple[str, VisitKind]] = None) -> VisitKind:
    """
    Maps a schedule's appointment type label onto a visit kind.
    The first keyword found in the label wins; anything else is `other`.
    """
    if not raw_type_label or not raw_type_label.strip():
        raise ValueError("appointment type label must be non-empty")

    label = raw_type_label.casefold()
    for keyword, kind in rules if rules is not None else visit_rules():
        if keyword in label:
            return kind

    return VisitKind.other
