"""Hourly clinical severity scores: SOFA, SIRS, qSOFA, MEWS, NEWS.

All scorers consume the carried-forward hourly grid plus the treatment log,
and every point table lives in ``data/score_definitions.json`` so the
thresholds stay auditable. A criterion whose inputs were never observed
contributes 0 points; missing data degrade a score to its observable part.

Treatment handling follows the label construction rules: GCS is forced to 15
for any hour inside a sedation interval, respiratory SOFA levels 3-4 require
active mechanical ventilation, and the trailing-24h urine criterion is not
evaluated before hour 12 of the stay.

The ``*-partial`` variants drop every treatment-dependent criterion
(vasopressors, ventilation / supplemental oxygen, GCS incl. sedation) and are
meant as model features only, never as label inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import default_score_definitions
from .core import HourlyStay, TreatmentLog

SOFA_COMPONENTS = ("respiratory", "coagulation", "liver", "cardiovascular", "cns", "renal")

FULL_SCORE_IDS = ("sirs", "qsofa", "mews", "news")
PARTIAL_SCORE_IDS = ("sofa-partial", "sirs-partial", "mews-partial", "news-partial", "qsofa-partial")

SCORE_RANGES = {
    "sirs": (0, 4), "qsofa": (0, 3), "mews": (0, 14), "news": (0, 20),
    "sofa-partial": (0, 15), "sirs-partial": (0, 4), "mews-partial": (0, 11),
    "news-partial": (0, 15), "qsofa-partial": (0, 2),
}

_OPS = {
    "lt": np.less, "le": np.less_equal, "gt": np.greater, "ge": np.greater_equal,
}


@dataclass
class SofaHourly:
    """Hourly SOFA total and its six components (each 0-4)."""

    stay_id: str
    total: np.ndarray
    components: dict[str, np.ndarray]

    def __post_init__(self):
        assert set(self.components) == set(SOFA_COMPONENTS)


@dataclass
class ScoreSeries:
    """One clinical score evaluated on every hour of a stay."""

    stay_id: str
    score_id: str
    values: np.ndarray  # integer points per hour


def apply_rules(values: np.ndarray, rules: list) -> np.ndarray:
    """First-match rule evaluation: rules are ordered [op, threshold, points].

    NaN inputs match nothing and score 0.
    """
    out = np.zeros(values.shape, dtype=int)
    undecided = np.ones(values.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        for op, threshold, points in rules:
            hit = undecided & _OPS[op](values, threshold)
            out[hit] = points
            undecided &= ~hit
    return out


def interval_mask(intervals, n_hours: int) -> np.ndarray:
    """Hours whose [t, t+1) bucket overlaps any closed interval [start, end]."""
    mask = np.zeros(n_hours, dtype=bool)
    hours = np.arange(n_hours)
    for iv in intervals:
        mask |= (iv.start < hours + 1) & (iv.end >= hours)
    return mask


def vasopressor_rates(treatments: TreatmentLog, agent: str, n_hours: int) -> np.ndarray:
    """Max infusion rate of one agent active per hour (0 when none running)."""
    rates = np.zeros(n_hours)
    hours = np.arange(n_hours)
    for ep in treatments.vasopressors:
        if ep.agent != agent or ep.rate <= 0:
            continue
        active = (ep.start < hours + 1) & (ep.end >= hours)
        rates[active] = np.maximum(rates[active], ep.rate)
    return rates


def gcs_series(stay: HourlyStay, treatments: TreatmentLog | None) -> np.ndarray:
    """Hourly GCS: tgcs when present, else the component sum; sedated hours -> 15.

    Hours with no usable GCS are NaN (their criteria then score 0).
    """
    gcs = stay.value_array("tgcs").astype(float).copy()
    comp = stay.value_array("egcs") + stay.value_array("mgcs") + stay.value_array("vgcs")
    use_sum = np.isnan(gcs) & ~np.isnan(comp)
    gcs[use_sum] = comp[use_sum]
    if treatments is not None and treatments.sedation:
        gcs[interval_mask(treatments.sedation, stay.n_hours)] = 15.0
    return gcs


def _require_carried_forward(stay: HourlyStay) -> None:
    if not stay.carried_forward:
        raise ValueError("scores consume the carried-forward grid; call carry_forward first")


def _trailing_urine_sum(stay: HourlyStay, window: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-24h urine sum on the carried-forward grid.

    Returns (sums, usable) where usable marks hours with at least one
    non-absent urine value inside the window.
    """
    urine = stay.value_array("urine")
    filled = np.nan_to_num(urine, nan=0.0)
    present = (~np.isnan(urine)).astype(float)
    csum = np.concatenate(([0.0], np.cumsum(filled)))
    cnt = np.concatenate(([0.0], np.cumsum(present)))
    t = np.arange(stay.n_hours)
    start = np.maximum(0, t - window + 1)
    sums = csum[t + 1] - csum[start]
    usable = (cnt[t + 1] - cnt[start]) > 0
    return sums, usable


def sofa_hourly(
    stay: HourlyStay,
    treatments: TreatmentLog | None = None,
    definitions: dict | None = None,
) -> SofaHourly:
    """Hourly SOFA from the carried-forward grid and the treatment log."""
    _require_carried_forward(stay)
    defs = (definitions or default_score_definitions())["sofa"]
    n = stay.n_hours
    treatments = treatments or TreatmentLog.empty(stay.stay_id)
    comps: dict[str, np.ndarray] = {}

    # Respiratory: PaO2/FiO2 with ventilation gating.
    po2 = stay.value_array("po2")
    fio2 = stay.value_array("fio2")
    with np.errstate(invalid="ignore", divide="ignore"):
        pf = po2 / (fio2 / 100.0)
    resp = apply_rules(pf, defs["respiratory"]["rules"])
    vent = interval_mask(treatments.ventilation, n)
    gate = int(defs["respiratory"]["ventilation_required_at_or_above"])
    cap = int(defs["respiratory"]["cap_without_ventilation"])
    resp = np.where((resp >= gate) & ~vent, cap, resp)
    comps["respiratory"] = resp

    comps["coagulation"] = apply_rules(stay.value_array("plt"), defs["coagulation"]["rules"])
    comps["liver"] = apply_rules(stay.value_array("bili"), defs["liver"]["rules"])

    # Cardiovascular: MAP point or the worst active vasopressor level.
    cardio = apply_rules(stay.value_array("map"), defs["cardiovascular"]["map_rules"])
    for agent, key in (
        ("dopamine", "dopamine_rules"),
        ("epinephrine", "epinephrine_rules"),
        ("norepinephrine", "norepinephrine_rules"),
        ("dobutamine", "dobutamine_rules"),
    ):
        rates = vasopressor_rates(treatments, agent, n)
        cardio = np.maximum(cardio, apply_rules(rates, defs["cardiovascular"][key]))
    comps["cardiovascular"] = cardio

    comps["cns"] = apply_rules(gcs_series(stay, treatments), defs["cns"]["rules"])

    renal = apply_rules(stay.value_array("crea"), defs["renal"]["creatinine_rules"])
    sums, usable = _trailing_urine_sum(stay)
    urine_pts = apply_rules(sums, defs["renal"]["urine_24h_rules"])
    eligible = usable & (np.arange(n) >= int(defs["renal"]["urine_min_hour"]))
    comps["renal"] = np.maximum(renal, np.where(eligible, urine_pts, 0))

    total = np.sum([comps[c] for c in SOFA_COMPONENTS], axis=0)
    return SofaHourly(stay_id=stay.stay_id, total=total, components=comps)


def _table_score(
    stay: HourlyStay,
    treatments: TreatmentLog | None,
    score_id: str,
    definitions: dict,
    include_treatment_terms: bool,
) -> np.ndarray:
    n = stay.n_hours
    treatments = treatments or TreatmentLog.empty(stay.stay_id)
    gcs = gcs_series(stay, treatments) if include_treatment_terms else None
    if include_treatment_terms:
        vent = interval_mask(treatments.ventilation, n)
        fio2 = stay.value_array("fio2")
        with np.errstate(invalid="ignore"):
            supp = vent | (fio2 > 21.0)
        supp_o2 = supp.astype(float)
    else:
        supp_o2 = None

    total = np.zeros(n, dtype=int)
    for criterion in definitions[score_id]["criteria"]:
        if criterion.get("uses_treatment") and not include_treatment_terms:
            continue
        points = np.zeros(n, dtype=int)
        for input_name, rules in criterion["inputs"].items():
            if input_name == "gcs":
                series = gcs
            elif input_name == "supp_o2":
                series = supp_o2
            else:
                series = stay.value_array(input_name)
            if series is None:
                # composite input unavailable in the treatment-free variant
                continue
            points = np.maximum(points, apply_rules(series, rules))
        total += points
    return total


def sirs_hourly(stay, treatments=None, definitions=None) -> ScoreSeries:
    defs = definitions or default_score_definitions()
    _require_carried_forward(stay)
    return ScoreSeries(stay.stay_id, "sirs", _table_score(stay, treatments, "sirs", defs, True))


def qsofa_hourly(stay, treatments=None, definitions=None) -> ScoreSeries:
    defs = definitions or default_score_definitions()
    _require_carried_forward(stay)
    return ScoreSeries(stay.stay_id, "qsofa", _table_score(stay, treatments, "qsofa", defs, True))


def mews_hourly(stay, treatments=None, definitions=None) -> ScoreSeries:
    defs = definitions or default_score_definitions()
    _require_carried_forward(stay)
    return ScoreSeries(stay.stay_id, "mews", _table_score(stay, treatments, "mews", defs, True))


def news_hourly(stay, treatments=None, definitions=None) -> ScoreSeries:
    defs = definitions or default_score_definitions()
    _require_carried_forward(stay)
    return ScoreSeries(stay.stay_id, "news", _table_score(stay, treatments, "news", defs, True))


def partial_sofa_hourly(stay: HourlyStay, definitions: dict | None = None) -> ScoreSeries:
    """SOFA restricted to lab/vital terms: no ventilation gating credit, no
    vasopressor levels, no CNS. Respiratory is capped at the no-ventilation
    level; cardiovascular keeps only the MAP point."""
    _require_carried_forward(stay)
    defs = (definitions or default_score_definitions())["sofa"]
    po2 = stay.value_array("po2")
    fio2 = stay.value_array("fio2")
    with np.errstate(invalid="ignore", divide="ignore"):
        pf = po2 / (fio2 / 100.0)
    resp = np.minimum(apply_rules(pf, defs["respiratory"]["rules"]),
                      int(defs["respiratory"]["cap_without_ventilation"]))
    coag = apply_rules(stay.value_array("plt"), defs["coagulation"]["rules"])
    liver = apply_rules(stay.value_array("bili"), defs["liver"]["rules"])
    cardio = apply_rules(stay.value_array("map"), defs["cardiovascular"]["map_rules"])
    renal = apply_rules(stay.value_array("crea"), defs["renal"]["creatinine_rules"])
    sums, usable = _trailing_urine_sum(stay)
    urine_pts = apply_rules(sums, defs["renal"]["urine_24h_rules"])
    eligible = usable & (np.arange(stay.n_hours) >= int(defs["renal"]["urine_min_hour"]))
    renal = np.maximum(renal, np.where(eligible, urine_pts, 0))
    total = resp + coag + liver + cardio + renal
    return ScoreSeries(stay.stay_id, "sofa-partial", total)


def partial_score_hourly(score_id: str, stay: HourlyStay, definitions: dict | None = None) -> ScoreSeries:
    """Treatment-free variant of a score, usable as a model feature."""
    defs = definitions or default_score_definitions()
    if score_id == "sofa-partial":
        return partial_sofa_hourly(stay, defs)
    if score_id not in PARTIAL_SCORE_IDS:
        raise KeyError(f"no partial definition for score {score_id!r}")
    base = score_id.removesuffix("-partial")
    _require_carried_forward(stay)
    return ScoreSeries(stay.stay_id, score_id, _table_score(stay, None, base, defs, False))


def all_partial_scores(stay: HourlyStay, definitions: dict | None = None) -> dict[str, np.ndarray]:
    defs = definitions or default_score_definitions()
    return {sid: partial_score_hourly(sid, stay, defs).values for sid in PARTIAL_SCORE_IDS}
