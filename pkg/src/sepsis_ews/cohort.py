"""Patient and site exclusion cascade with a reconciling study-flow report.

Per-stay rules are applied in a fixed documented order and the first match
wins, so every excluded stay carries exactly one reason:

  a) age < 14 years                          -> non-adult
  i) ICU length of stay < 6h                 -> short-stay
 ii) fewer than 4 distinct measured hours    -> sparse-measurements
iii) a run of > 12 consecutive empty hours   -> long-gap
 iv) onset < 0 or >= length of stay          -> onset-outside-icu
  v) onset < 4h / > 168h                     -> onset-too-early / onset-too-late

Measured-hour and gap rules read the pre-carry-forward grid (carry-forward
would hide gaps by construction), counting hours where any variable was
measured. The site-prevalence filter only applies to multi-site inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import HourlyStay
from .labels import SepsisAnnotation

MIN_AGE_YEARS = 14.0
MIN_LOS_HOURS = 6.0
MIN_MEASURED_HOURS = 4
MAX_GAP_HOURS = 12
MIN_ONSET_HOUR = 4.0
MAX_ONSET_HOUR = 168.0
MIN_SITE_PREVALENCE = 0.15

REASONS = (
    "non-adult", "short-stay", "sparse-measurements", "long-gap",
    "onset-outside-icu", "onset-too-early", "onset-too-late", "low-prevalence-site",
)


@dataclass(frozen=True)
class ExclusionReason:
    reason: str
    quantity: float  # the triggering quantity (age, LOS, gap length, onset hour, ...)

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown exclusion reason {self.reason!r}")


@dataclass
class StudyFlowReport:
    input_count: int
    retained_count: int
    excluded_counts: dict[str, int]
    site_prevalence: dict[str, dict] = field(default_factory=dict)
    dropped_sites: list[str] = field(default_factory=list)

    def reconciles(self) -> bool:
        return self.input_count == self.retained_count + sum(self.excluded_counts.values())

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "retained_count": self.retained_count,
            "excluded_counts": self.excluded_counts,
            "site_prevalence": self.site_prevalence,
            "dropped_sites": self.dropped_sites,
        }

    def format_table(self) -> str:
        lines = [f"{'input stays':<28}{self.input_count:>8}"]
        for reason in REASONS:
            n = self.excluded_counts.get(reason, 0)
            if n:
                lines.append(f"{'excluded: ' + reason:<28}{n:>8}")
        lines.append(f"{'retained':<28}{self.retained_count:>8}")
        if self.site_prevalence:
            lines.append("")
            lines.append(f"{'site':<12}{'stays':>8}{'cases':>8}{'prevalence':>12}")
            for site, row in sorted(self.site_prevalence.items()):
                flag = "  (dropped)" if site in self.dropped_sites else ""
                lines.append(f"{site:<12}{row['stays']:>8}{row['cases']:>8}{row['prevalence']:>12.3f}{flag}")
        return "\n".join(lines)


def longest_empty_run(stay: HourlyStay) -> int:
    """Longest run of consecutive hours with zero measurements across all variables."""
    measured = stay.measured_hours()
    longest = run = 0
    for has_data in measured:
        run = 0 if has_data else run + 1
        longest = max(longest, run)
    return longest


def filter_stay(stay: HourlyStay, annotation: SepsisAnnotation) -> ExclusionReason | None:
    """First matching exclusion rule, or None when the stay passes."""
    if stay.static.age < MIN_AGE_YEARS:
        return ExclusionReason("non-adult", stay.static.age)
    los = stay.static.icu_los_hours
    if los < MIN_LOS_HOURS:
        return ExclusionReason("short-stay", los)
    n_measured = int(stay.measured_hours().sum())
    if n_measured < MIN_MEASURED_HOURS:
        return ExclusionReason("sparse-measurements", n_measured)
    gap = longest_empty_run(stay)
    if gap > MAX_GAP_HOURS:
        return ExclusionReason("long-gap", gap)
    onset = annotation.onset
    if onset is not None:
        if onset < 0 or onset >= los:
            return ExclusionReason("onset-outside-icu", onset)
        if onset < MIN_ONSET_HOUR:
            return ExclusionReason("onset-too-early", onset)
        if onset > MAX_ONSET_HOUR:
            return ExclusionReason("onset-too-late", onset)
    return None


def filter_sites(
    stays: dict[str, HourlyStay],
    annotations: dict[str, SepsisAnnotation],
    min_prevalence: float = MIN_SITE_PREVALENCE,
) -> tuple[list[str], list[str], dict[str, dict]]:
    """Drop sites whose Sepsis-3 prevalence is strictly below the threshold.

    Expects the per-stay exclusions to have been applied already. Single-site
    cohorts are returned unchanged. Returns (kept sites, dropped sites, table).
    """
    per_site: dict[str, dict] = {}
    for sid, stay in stays.items():
        site = stay.static.site_id
        row = per_site.setdefault(site, {"stays": 0, "cases": 0})
        row["stays"] += 1
        row["cases"] += int(annotations[sid].is_case)
    table = {}
    for site, row in per_site.items():
        if row["stays"] == 0:
            continue
        table[site] = {**row, "prevalence": row["cases"] / row["stays"]}
    if len(table) <= 1:
        return list(table), [], table
    kept = [s for s, row in table.items() if row["prevalence"] >= min_prevalence]
    dropped = [s for s in table if s not in kept]
    return kept, dropped, table


def filter_cohort(
    stays: dict[str, HourlyStay],
    annotations: dict[str, SepsisAnnotation],
    min_prevalence: float = MIN_SITE_PREVALENCE,
) -> tuple[list[str], dict[str, ExclusionReason], StudyFlowReport]:
    """Run the full cascade: per-stay rules, then the site-prevalence filter."""
    verdicts: dict[str, ExclusionReason] = {}
    survivors: dict[str, HourlyStay] = {}
    for sid, stay in stays.items():
        reason = filter_stay(stay, annotations[sid])
        if reason is None:
            survivors[sid] = stay
        else:
            verdicts[sid] = reason

    kept_sites, dropped_sites, table = filter_sites(
        survivors, annotations, min_prevalence=min_prevalence
    )
    retained = []
    for sid, stay in survivors.items():
        if dropped_sites and stay.static.site_id in dropped_sites:
            verdicts[sid] = ExclusionReason(
                "low-prevalence-site", table[stay.static.site_id]["prevalence"]
            )
        else:
            retained.append(sid)

    counts: dict[str, int] = {}
    for reason in verdicts.values():
        counts[reason.reason] = counts.get(reason.reason, 0) + 1
    report = StudyFlowReport(
        input_count=len(stays),
        retained_count=len(retained),
        excluded_counts=counts,
        site_prevalence=table,
        dropped_sites=dropped_sites,
    )
    assert report.reconciles()
    return retained, verdicts, report
