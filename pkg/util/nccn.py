import logging
from typing import List, Optional

from models.chart import DiagnosisDetail, LabResult, MStage, NStage, PatientChart, TStage
from models.risk import ProstateInputs, RiskAssessment, RiskCategory
from util.errors import ClinicalRuleError

logger = logging.getLogger(__name__)

VERY_HIGH_T = {TStage.T3b, TStage.T4}
# Bare T3 is read as T3a.
HIGH_T = {TStage.T3a, TStage.T3}
INTERMEDIATE_T = {TStage.T2b, TStage.T2c}


def classify_nccn_prostate(inputs: ProstateInputs) -> RiskAssessment:
    """
    NCCN prostate risk grouping, evaluated very high > high > intermediate > low.
    Intermediate risk is split into favorable and unfavorable.
    """
    gleason = inputs.gleason_sum
    psa = inputs.psa_ng_ml

    very_high = []
    if inputs.t_stage in VERY_HIGH_T:
        very_high.append("t3b_t4")
    if inputs.gleason_primary == 5:
        very_high.append("primary_gleason_5")
    if inputs.cores_positive > 5 and gleason >= 8:
        very_high.append("cores_gt5_gleason_ge8")
    if inputs.n_stage == NStage.N1:
        very_high.append("n1")
    if inputs.m_stage == MStage.M1:
        very_high.append("m1")
    if very_high:
        return RiskAssessment(
            category=RiskCategory.very_high,
            triggered_factors=very_high,
            explanation=f"very high risk: {', '.join(very_high)}",
        )

    high = []
    if inputs.t_stage in HIGH_T:
        high.append("t3a")
    if gleason >= 8:
        high.append("gleason_ge8")
    if psa > 20:
        high.append("psa_gt20")
    if high:
        return RiskAssessment(
            category=RiskCategory.high,
            triggered_factors=high,
            explanation=f"high risk: {', '.join(high)}",
        )

    intermediate = []
    if inputs.t_stage in INTERMEDIATE_T:
        intermediate.append("t2b_t2c")
    if gleason == 7:
        intermediate.append("gleason_7")
    if 10 <= psa <= 20:
        intermediate.append("psa_10_20")
    if not intermediate:
        return RiskAssessment(
            category=RiskCategory.low,
            explanation="low risk: T1-T2a, Gleason 6 or less and PSA below 10 ng/mL",
        )

    unfavorable = []
    if len(intermediate) >= 2:
        unfavorable.append("multiple_intermediate_factors")
    if inputs.gleason_primary == 4:
        unfavorable.append("primary_gleason_4")
    if inputs.cores_positive / inputs.cores_total >= 0.5:
        unfavorable.append("cores_ge_50pct")

    if unfavorable:
        return RiskAssessment(
            category=RiskCategory.intermediate_unfavorable,
            triggered_factors=intermediate + unfavorable,
            explanation=f"unfavorable intermediate risk: {', '.join(intermediate + unfavorable)}",
        )
    return RiskAssessment(
        category=RiskCategory.intermediate_favorable,
        triggered_factors=intermediate,
        explanation=f"favorable intermediate risk: {intermediate[0]}",
    )


def format_psa(value: float) -> str:
    return f"{value:.1f}" if round(value, 1) == value else f"{value:g}"


def prostate_diagnoses(chart: PatientChart) -> List[DiagnosisDetail]:
    return [d for d in chart.diagnoses if "prostate" in d.site.lower() and d.prostate_detail is not None]


def psa_closest_to(series: List[LabResult], onset) -> LabResult:
    # Ties go to the earlier measurement.
    return min(series, key=lambda lab: (abs((lab.date - onset).days), lab.date))


def prostate_addendum(chart: PatientChart) -> Optional[str]:
    diagnoses = prostate_diagnoses(chart)
    if not diagnoses:
        raise ClinicalRuleError(f"{chart.patient_id} has no prostate diagnosis with biopsy detail")

    series = chart.psa_series()
    if not series:
        logger.info("No PSA values for %s; prostate addendum omitted", chart.patient_id)
        return None

    current = diagnoses[-1]
    worst = max(diagnoses, key=lambda d: (d.prostate_detail.gleason_sum, d.prostate_detail.gleason_primary))
    detail = worst.prostate_detail
    latest = series[-1]
    at_onset = psa_closest_to(series, current.onset_date)

    if current.staging is None:
        raise ClinicalRuleError(f"{chart.patient_id} has no staging for the prostate diagnosis")

    assessment = classify_nccn_prostate(
        ProstateInputs(
            t_stage=current.staging.t_stage,
            n_stage=current.staging.n_stage,
            m_stage=current.staging.m_stage,
            gleason_primary=detail.gleason_primary,
            gleason_secondary=detail.gleason_secondary,
            psa_ng_ml=at_onset.value,
            cores_positive=detail.cores_positive,
            cores_total=detail.cores_total,
        )
    )

    return (
        f"Prostate cancer: highest Gleason {detail.gleason_label()} on biopsy "
        f"({detail.cores_positive}/{detail.cores_total} cores positive), "
        f"most recent PSA {format_psa(latest.value)} ng/mL on {latest.date.isoformat()}, "
        f"PSA closest to diagnosis {format_psa(at_onset.value)} ng/mL on {at_onset.date.isoformat()}, "
        f"NCCN risk category {assessment.category.phrase()}."
    )
