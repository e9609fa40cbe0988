import itertools
import logging
import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError
from scipy import stats

from models.survey import (
    LIKERT_DOMAINS,
    Domain,
    DomainScore,
    ItemKind,
    ResponseMatrix,
    SurveyItem,
    TestResult,
)
from util.errors import (
    InsufficientDataError,
    MissingMidpointError,
    SurveyError,
    UndefinedStatisticError,
)

logger = logging.getLogger(__name__)

# Exact Mann-Whitney p up to this many observations in total.
EXACT_LIMIT = 10
# Exact Kruskal-Wallis p while the number of group assignments stays under this.
EXACT_ASSIGNMENTS = 20000

TIME_SAVED_CATEGORIES = ["none", "<5", "5-10", "10-20", ">20"]
DEFAULT_MIDPOINTS = {"none": 0.0, "<5": 2.5, "5-10": 7.5, "10-20": 15.0, ">20": 25.0}
PUBLISHED_TIME_SAVED = {"none": 12, "<5": 18, "5-10": 10, "10-20": 8, ">20": 7}
PUBLISHED_TOTAL_MINUTES = 560.0

SENIORITY_CATEGORIES = ["<5", "5-10", ">10"]

PUBLISHED_RESPONDENTS = 55
PUBLISHED_DOMAINS = {
    Domain.usability_satisfaction: (3.89, 1.04),
    Domain.usefulness: (3.43, 1.24),
    Domain.impact_future: (3.80, 1.17),
}
PUBLISHED_OVERALL_SATISFACTION = (3.70, 1.10)
# Strongly disagree .. strongly agree, in percent.
PUBLISHED_SATISFACTION_PERCENTAGES = [7, 24, 20, 16, 33]
PUBLISHED_ALPHA = {
    "overall": 0.971,
    Domain.usability_satisfaction: 0.906,
    Domain.usefulness: 0.937,
    Domain.impact_future: 0.951,
}


def _clean(values: Sequence) -> np.ndarray:
    array = np.asarray(pd.to_numeric(pd.Series(list(values), dtype=object), errors="coerce"), dtype=np.float64)
    return array[~np.isnan(array)]


def _tie_term(values: np.ndarray) -> float:
    _, counts = np.unique(values, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def cronbach_alpha(block: pd.DataFrame) -> TestResult:
    """
    Cronbach's alpha over the columns of `block`. Rows with any missing
    item are dropped first.
    """
    complete = block.apply(pd.to_numeric, errors="coerce").dropna(axis=0, how="any")
    k = block.shape[1]
    if k < 2:
        raise InsufficientDataError(f"alpha needs at least 2 items, got {k}")
    if len(complete) < 2:
        raise InsufficientDataError(f"alpha needs at least 2 complete respondents, got {len(complete)}")

    values = complete.to_numpy(dtype=np.float64)
    item_variances = values.var(axis=0, ddof=1)
    total_variance = values.sum(axis=1).var(ddof=1)
    if total_variance == 0:
        raise UndefinedStatisticError("alpha is undefined: respondents' total scores have zero variance")

    alpha = (k / (k - 1)) * (1 - item_variances.sum() / total_variance)
    dropped = len(block) - len(complete)
    return TestResult(
        statistic_name="alpha",
        statistic_value=float(alpha),
        n_used=len(complete),
        method_note=f"listwise deletion within domain ({dropped} incomplete rows dropped); n-1 variances",
    )


def domain_score(matrix: ResponseMatrix, domain: Domain) -> DomainScore:
    block = matrix.likert(domain)
    if block.shape[1] == 0:
        raise SurveyError(f"domain {Domain(domain).value} has no Likert items")

    per_respondent = block.mean(axis=1, skipna=True).dropna()
    if per_respondent.empty:
        raise InsufficientDataError(f"nobody answered any {Domain(domain).value} item")
    sd = float(per_respondent.std(ddof=1)) if len(per_respondent) > 1 else 0.0
    return DomainScore(
        domain=domain,
        per_respondent={str(k): float(v) for k, v in per_respondent.items()},
        mean=float(per_respondent.mean()),
        sd=sd,
        n=len(per_respondent),
    )


def spearman_rho(x: Sequence, y: Sequence) -> TestResult:
    if len(x) != len(y):
        raise SurveyError("spearman_rho needs paired observations")
    pairs = pd.DataFrame({"x": pd.to_numeric(pd.Series(list(x)), errors="coerce"), "y": pd.to_numeric(pd.Series(list(y)), errors="coerce")})
    pairs = pairs.dropna()
    n = len(pairs)
    if n < 3:
        raise InsufficientDataError(f"spearman_rho needs at least 3 pairs, got {n}")

    if pairs["x"].nunique() == 1 or pairs["y"].nunique() == 1:
        raise UndefinedStatisticError("spearman_rho is undefined when either variable is constant")

    rho, p = stats.spearmanr(pairs["x"].to_numpy(), pairs["y"].to_numpy())
    return TestResult(
        statistic_name="rho",
        statistic_value=max(-1.0, min(1.0, float(rho))),
        p_value=min(1.0, float(p)),
        n_used=n,
        method_note=f"average ranks; two-sided p from t distribution with {n - 2} df; pairwise deletion",
    )


def _u_statistic(a: np.ndarray, combined_ranks: np.ndarray) -> float:
    n_a = len(a)
    return float(combined_ranks[:n_a].sum() - n_a * (n_a + 1) / 2)


def _exact_u_p(n_a: int, n_b: int, u: float) -> float:
    n = n_a + n_b
    ranks = np.arange(1, n + 1, dtype=np.float64)
    offset = n_a * (n_a + 1) / 2
    distribution = [ranks[list(chosen)].sum() - offset for chosen in itertools.combinations(range(n), n_a)]
    distribution = np.asarray(distribution)
    total = len(distribution)
    lower = np.sum(distribution <= u + 1e-9) / total
    upper = np.sum(distribution >= u - 1e-9) / total
    return float(min(1.0, 2 * min(lower, upper)))


def mann_whitney_u(group_a: Sequence, group_b: Sequence) -> TestResult:
    """
    U for group_a. Exact two-sided p for small tie-free samples, otherwise
    the normal approximation with tie correction and continuity correction.
    """
    a, b = _clean(group_a), _clean(group_b)
    if len(a) == 0 or len(b) == 0:
        raise InsufficientDataError("mann_whitney_u needs two non-empty groups")

    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    combined = np.concatenate([a, b])
    u = _u_statistic(a, stats.rankdata(combined))
    distinct = len(np.unique(combined))

    if n <= EXACT_LIMIT and distinct == n:
        p = _exact_u_p(n_a, n_b, u)
        note = f"exact enumeration over C({n},{n_a}) arrangements"
    elif distinct == 1:
        p = 1.0
        note = "all observations identical"
    else:
        result = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        p = min(1.0, float(result.pvalue))
        note = "normal approximation with tie-corrected variance and continuity correction"

    return TestResult(statistic_name="U", statistic_value=u, p_value=p, n_used=n, method_note=note)


def _h_from_rank_sums(rank_sums: Sequence[float], sizes: Sequence[int], n: int) -> float:
    return 12 / (n * (n + 1)) * sum(r * r / s for r, s in zip(rank_sums, sizes)) - 3 * (n + 1)


def _rank_sum_assignments(ranks: Tuple[int, ...], sizes: Sequence[int]):
    if len(sizes) == 1:
        yield (sum(ranks),)
        return
    for chosen in itertools.combinations(range(len(ranks)), sizes[0]):
        picked = set(chosen)
        rest = tuple(r for i, r in enumerate(ranks) if i not in picked)
        head = sum(ranks[i] for i in chosen)
        for tail in _rank_sum_assignments(rest, sizes[1:]):
            yield (head,) + tail


def _assignment_count(sizes: Sequence[int]) -> int:
    count = math.factorial(sum(sizes))
    for size in sizes:
        count //= math.factorial(size)
    return count


def kruskal_wallis(groups: Sequence[Sequence]) -> TestResult:
    """
    H with average ranks and the tie correction divisor. Small tie-free
    samples get an exact permutation p; the rest use chi-square with k-1 df.
    """
    cleaned = [_clean(group) for group in groups]
    cleaned = [group for group in cleaned if len(group)]
    if len(cleaned) < 2:
        raise InsufficientDataError("kruskal_wallis needs at least 2 non-empty groups")

    sizes = [len(group) for group in cleaned]
    combined = np.concatenate(cleaned)
    n = len(combined)
    correction = 1 - _tie_term(combined) / (n**3 - n)
    if correction <= 0:
        return TestResult(
            statistic_name="H",
            statistic_value=0.0,
            p_value=1.0,
            n_used=n,
            method_note="all observations identical; H defined as 0",
        )

    result = stats.kruskal(*cleaned)
    h = float(result.statistic)
    ties = len(np.unique(combined)) < n
    if not ties and _assignment_count(sizes) <= EXACT_ASSIGNMENTS:
        observed = h - 1e-9
        distribution = [
            _h_from_rank_sums(sums, sizes, n) for sums in _rank_sum_assignments(tuple(range(1, n + 1)), sizes)
        ]
        p = float(np.mean(np.asarray(distribution) >= observed))
        note = "exact permutation distribution of H"
    else:
        p = float(result.pvalue)
        note = f"chi-square approximation with {len(sizes) - 1} df; tie correction {correction:.4f}"

    return TestResult(statistic_name="H", statistic_value=h, p_value=min(1.0, p), n_used=n, method_note=note)


def time_saved_total(category_counts: Mapping[str, int], midpoint_map: Mapping[str, float]) -> float:
    total = 0.0
    for category, count in category_counts.items():
        if count < 0:
            raise SurveyError(f"negative count for {category}")
        if category not in midpoint_map:
            raise MissingMidpointError(category)
        total += count * midpoint_map[category]
    return total


def load_responses(data_path, manifest_path) -> ResponseMatrix:
    """
    Reads a delimiter-separated response file and its YAML manifest, which
    maps every column to an item and a domain.
    """
    try:
        with open(manifest_path, "r", encoding="utf-8") as file:
            manifest = yaml.safe_load(file) or {}
    except FileNotFoundError:
        raise SurveyError(f"manifest not found: {manifest_path}")
    except yaml.YAMLError as e:
        raise SurveyError(f"manifest is not valid YAML: {e}")

    try:
        items = [
            SurveyItem(
                item_id=str(entry["id"]),
                domain=entry["domain"],
                kind=entry.get("kind", "likert"),
                text=entry.get("text", ""),
                categories=[str(c) for c in entry.get("categories", [])],
            )
            for entry in manifest.get("items", [])
        ]
    except (KeyError, ValidationError) as e:
        raise SurveyError(f"invalid manifest item: {e}")

    respondent_column = manifest.get("respondent_column", "respondent_id")
    separator = manifest.get("delimiter", ",")
    try:
        raw = pd.read_csv(data_path, sep=separator, dtype=str, keep_default_na=True)
    except FileNotFoundError:
        raise SurveyError(f"response file not found: {data_path}")

    if respondent_column not in raw.columns:
        raise SurveyError(f"response file has no {respondent_column} column")
    unknown = [c for c in raw.columns if c != respondent_column and c not in {i.item_id for i in items}]
    if unknown:
        raise SurveyError(f"columns missing from the manifest: {unknown}")
    missing = [i.item_id for i in items if i.item_id not in raw.columns]
    if missing:
        raise SurveyError(f"manifest items missing from the response file: {missing}")

    frame = raw.set_index(respondent_column)[[item.item_id for item in items]]
    frame = frame.astype(object).where(frame.notna(), None)
    for item in items:
        if item.kind == ItemKind.likert:
            frame[item.item_id] = pd.to_numeric(frame[item.item_id], errors="coerce").astype(np.float64)

    try:
        return ResponseMatrix(items=items, frame=frame, roles=manifest.get("roles", {}))
    except ValidationError as e:
        raise SurveyError(f"invalid responses: {e.errors()[0]['msg']}")


def counts_from_percentages(percentages: Sequence[float], n: int) -> List[int]:
    """
    Integer counts summing to n, by largest remainder. Ties go to the
    earlier category.
    """
    total = sum(percentages)
    if total <= 0:
        raise SurveyError("percentages must add up to something positive")
    exact = [p / total * n for p in percentages]
    counts = [math.floor(value) for value in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _moments(counts: Sequence[int]) -> Tuple[float, float]:
    values = np.repeat(np.arange(1, len(counts) + 1, dtype=np.float64), counts)
    return float(values.mean()), float(values.std(ddof=1))


def reconstruct_counts(mean: float, sd: float, n: int) -> List[int]:
    """
    Counts over the Likert scale 1-5 for n respondents whose mean and sample
    SD come closest to the published ones.
    """
    if n < 2:
        raise InsufficientDataError("reconstruction needs at least 2 respondents")
    target_sum = mean * n
    best = None
    for c1 in range(n + 1):
        for c2 in range(n + 1 - c1):
            for c5 in range(n + 1 - c1 - c2):
                rest = n - c1 - c2 - c5
                # 3*c3 + 4*c4 = 3*rest + c4
                c4 = round(target_sum - c1 - 2 * c2 - 5 * c5 - 3 * rest)
                if not 0 <= c4 <= rest:
                    continue
                counts = (c1, c2, rest - c4, c4, c5)
                got_mean, got_sd = _moments(counts)
                error = (abs(got_mean - mean) + abs(got_sd - sd), counts)
                if best is None or error < best:
                    best = error
    if best is None:
        raise SurveyError(f"no Likert distribution of {n} answers has mean {mean}")
    return list(best[1])


def _spread(counts: Mapping[str, int]) -> List[str]:
    """
    Interleaves categories so each is spread evenly over the sequence.
    """
    n = sum(counts.values())
    assigned = {category: 0 for category in counts}
    sequence = []
    for position in range(1, n + 1):
        category = max(counts, key=lambda c: (counts[c] * position / n - assigned[c], -list(counts).index(c)))
        assigned[category] += 1
        sequence.append(category)
    return sequence


def _sorted_answers(counts: Sequence[int]) -> List[float]:
    return [float(v) for v in np.repeat(np.arange(1, 6), counts)]


def synthesize_published_cohort() -> ResponseMatrix:
    """
    A 55-respondent cohort rebuilt from the published summary statistics.
    Respondents are ordered by satisfaction and every Likert item is
    assigned in that order; time saved rises with satisfaction, seniority
    and the other MCQs are spread evenly.
    """
    n = PUBLISHED_RESPONDENTS
    items: List[SurveyItem] = [
        SurveyItem(item_id="d_specialty", domain=Domain.demographics, kind=ItemKind.mcq,
                   categories=["Radiation oncology", "Medical oncology", "Oncology nurse navigator"]),
        SurveyItem(item_id="d_role", domain=Domain.demographics, kind=ItemKind.mcq,
                   categories=["Attending physician", "APP", "RN", "Resident / Fellow", "LPN"]),
        SurveyItem(item_id="d_seniority", domain=Domain.demographics, kind=ItemKind.mcq, categories=SENIORITY_CATEGORIES),
        SurveyItem(item_id="us_frequency", domain=Domain.usage, kind=ItemKind.mcq,
                   categories=["Daily", "A few times a week", "Occasionally", "Rarely or never"]),
        SurveyItem(item_id="us_time_saved", domain=Domain.usage, kind=ItemKind.mcq, categories=TIME_SAVED_CATEGORIES),
    ]
    columns: Dict[str, list] = {
        "d_specialty": _spread({"Radiation oncology": 52, "Medical oncology": 2, "Oncology nurse navigator": 1}),
        "d_role": _spread({"Attending physician": 38, "APP": 8, "RN": 6, "Resident / Fellow": 2, "LPN": 1}),
        "d_seniority": _spread({">10": 31, "5-10": 12, "<5": 12}),
        "us_frequency": _spread({"Daily": 29, "A few times a week": 17, "Occasionally": 5, "Rarely or never": 4}),
        "us_time_saved": [c for c in TIME_SAVED_CATEGORIES for _ in range(PUBLISHED_TIME_SAVED[c])],
    }

    usability_mean, usability_sd = PUBLISHED_DOMAINS[Domain.usability_satisfaction]
    overall_mean, overall_sd = PUBLISHED_OVERALL_SATISFACTION
    # Four items carry the rest of the usability mean once overall satisfaction is fixed.
    other_usability = reconstruct_counts((5 * usability_mean - overall_mean) / 4, usability_sd, n)
    for position in range(1, 5):
        items.append(SurveyItem(item_id=f"usab_{position}", domain=Domain.usability_satisfaction))
        columns[f"usab_{position}"] = _sorted_answers(other_usability)
    items.append(SurveyItem(item_id="usab_overall", domain=Domain.usability_satisfaction, text="Overall satisfaction"))
    columns["usab_overall"] = _sorted_answers(reconstruct_counts(overall_mean, overall_sd, n))

    for domain, prefix, count in ((Domain.usefulness, "useful", 5), (Domain.impact_future, "impact", 4)):
        answers = _sorted_answers(reconstruct_counts(*PUBLISHED_DOMAINS[domain], n))
        for position in range(1, count + 1):
            items.append(SurveyItem(item_id=f"{prefix}_{position}", domain=domain))
            columns[f"{prefix}_{position}"] = list(answers)

    index = [f"R{position:02d}" for position in range(1, n + 1)]
    frame = pd.DataFrame({item.item_id: columns[item.item_id] for item in items}, index=index)
    return ResponseMatrix(
        items=items,
        frame=frame,
        roles={"overall_satisfaction": "usab_overall", "time_saved": "us_time_saved", "seniority": "d_seniority"},
    )


def _groups(matrix: ResponseMatrix, value_item: str, group_item: str) -> Dict[str, np.ndarray]:
    item = matrix.item(group_item)
    values = pd.to_numeric(matrix.frame[value_item], errors="coerce")
    labels = matrix.frame[group_item]
    order = item.categories or sorted({str(v) for v in labels.dropna()})
    # Pairwise deletion: a respondent counts only if both answers exist.
    return {
        category: values[(labels == category) & values.notna()].to_numpy(dtype=np.float64)
        for category in order
    }


def _format_result(result: TestResult) -> str:
    text = f"{result.statistic_name} = {result.statistic_value:.4f}"
    if result.p_value is not None:
        text += f", p = {result.p_value:.4g}"
    return f"{text} (n = {result.n_used}; {result.method_note})"


def _safe(compute) -> str:
    try:
        return _format_result(compute())
    except SurveyError as e:
        return f"undefined ({e})"


def survey_report(
    matrix: ResponseMatrix,
    midpoints: Mapping[str, float] = DEFAULT_MIDPOINTS,
    published: bool = True,
) -> str:
    lines = ["# Survey analysis", "", f"Respondents: {len(matrix.respondents)}", ""]

    lines += ["## Internal consistency (Cronbach's alpha)", ""]
    domains = [d for d in LIKERT_DOMAINS if matrix.likert(d).shape[1]]
    for domain in domains:
        reference = f" (published {PUBLISHED_ALPHA[domain]})" if published else ""
        lines.append(f"- {domain.value}: {_safe(lambda: cronbach_alpha(matrix.likert(domain)))}{reference}")
    reference = f" (published {PUBLISHED_ALPHA['overall']})" if published else ""
    lines += [f"- overall: {_safe(lambda: cronbach_alpha(matrix.likert()))}{reference}", ""]

    lines += ["## Domain scores", "", "| Domain | Mean | SD | n |", "|---|---|---|---|"]
    for domain in domains:
        try:
            score = domain_score(matrix, domain)
        except SurveyError as e:
            lines.append(f"| {domain.value} | undefined ({e}) | | |")
            continue
        lines.append(f"| {domain.value} | {score.mean:.2f} | {score.sd:.2f} | {score.n} |")
    if published:
        lines += [
            "",
            "Published: "
            + ", ".join(f"{d.value} {m:.2f} ({s:.2f})" for d, (m, s) in PUBLISHED_DOMAINS.items())
            + ".",
        ]
    lines.append("")

    satisfaction = matrix.roles.get("overall_satisfaction")
    time_saved = matrix.roles.get("time_saved")
    seniority = matrix.roles.get("seniority")

    if satisfaction:
        values = pd.to_numeric(matrix.frame[satisfaction], errors="coerce").dropna()
        lines += ["## Overall satisfaction", "", f"Mean {values.mean():.2f} (SD {values.std(ddof=1):.2f}), n = {len(values)}."]
        if published:
            from_percentages = counts_from_percentages(PUBLISHED_SATISFACTION_PERCENTAGES, PUBLISHED_RESPONDENTS)
            mean, _ = _moments(from_percentages)
            lines.append(
                f"Published {PUBLISHED_OVERALL_SATISFACTION[0]:.2f} (SD {PUBLISHED_OVERALL_SATISFACTION[1]:.2f}); "
                f"the published answer percentages imply {mean:.2f}, so the two published figures disagree."
            )
        lines.append("")

    if satisfaction and time_saved:
        groups = _groups(matrix, satisfaction, time_saved)
        lines += ["## Satisfaction by time saved", "", "| Time saved | n | Mean |", "|---|---|---|"]
        for category, values in groups.items():
            mean = f"{values.mean():.2f}" if len(values) else "-"
            lines.append(f"| {category} | {len(values)} | {mean} |")
        order = matrix.item(time_saved).categories or list(groups)
        codes = matrix.frame[time_saved].map(lambda v: order.index(v) if v in order else None)
        low = [c for c in order if c in ("none", "<5")]
        high = [c for c in order if c not in low]
        lines += [
            "",
            f"- Kruskal-Wallis: {_safe(lambda: kruskal_wallis([v for v in groups.values() if len(v)]))}",
            f"- Spearman (ordinal time saved): {_safe(lambda: spearman_rho(list(codes), list(matrix.frame[satisfaction])))}",
            "- Mann-Whitney (>5 vs <=5 minutes): "
            + _safe(
                lambda: mann_whitney_u(
                    np.concatenate([groups[c] for c in high]) if high else [],
                    np.concatenate([groups[c] for c in low]) if low else [],
                )
            ),
            "",
        ]

    if satisfaction and seniority:
        groups = _groups(matrix, satisfaction, seniority)
        lines += ["## Satisfaction by seniority", "", "| Seniority | n | Mean | SD |", "|---|---|---|---|"]
        for category, values in groups.items():
            mean = f"{values.mean():.2f}" if len(values) else "-"
            sd = f"{values.std(ddof=1):.2f}" if len(values) > 1 else "-"
            lines.append(f"| {category} | {len(values)} | {mean} | {sd} |")
        lines += ["", f"- Kruskal-Wallis: {_safe(lambda: kruskal_wallis([v for v in groups.values() if len(v)]))}", ""]

    if time_saved:
        counts = matrix.frame[time_saved].dropna().value_counts().to_dict()
        lines += ["## Time saved", ""]
        try:
            total = time_saved_total({str(k): int(v) for k, v in counts.items()}, midpoints)
            lines.append(f"Total perceived time saved: {total:.1f} minutes per day (midpoints {dict(midpoints)}).")
        except SurveyError as e:
            lines.append(f"Total perceived time saved: undefined ({e}).")
        if published:
            lines.append(
                f"Published counts give {time_saved_total(PUBLISHED_TIME_SAVED, DEFAULT_MIDPOINTS):.1f} minutes with these "
                f"midpoints; the published aggregate is {PUBLISHED_TOTAL_MINUTES:.0f} minutes per day, and the midpoints "
                "behind it are not stated."
            )
        lines.append("")

    return "\n".join(lines)


def analyze_file(data_path, manifest_path: Optional[Path] = None, midpoints: Mapping[str, float] = DEFAULT_MIDPOINTS) -> str:
    data_path = Path(data_path)
    manifest_path = Path(manifest_path) if manifest_path else data_path.with_suffix(".manifest.yml")
    matrix = load_responses(data_path, manifest_path)
    logger.info("Loaded %d responses over %d items from %s", len(matrix.respondents), len(matrix.items), data_path)
    return survey_report(matrix, midpoints, published=False)
