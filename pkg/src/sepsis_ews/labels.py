"""Sepsis-3 onset annotation: suspected infection windows, delta-SOFA onset,
and per-hour training labels.

Suspected infection (SI) comes in two flavours. The primary definition pairs
an antibiotic administration with a body-fluid sampling: antibiotics first
needs sampling within 24h, sampling first needs antibiotics within 72h (both
inclusive); the earlier of the two times is the SI time. The alternative
definition, for data sources without sampling records, requires multiple
antibiotic administrations close together. Either way the SI window spans
48h before to 24h after the SI time, and overlapping windows merge down to
the earliest SI time of each connected group.

Onset is the earliest grid hour inside an SI window where the hourly SOFA
total has risen by >= 2 points against its minimum over the trailing 24h.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, floor

import numpy as np

from .core import HourlyStay, TreatmentLog
from .scores import SofaHourly

SI_BACKWARD_H = 48.0   # window start offset before SI time
SI_FORWARD_H = 24.0    # window end offset after SI time
ABX_TO_SAMPLING_H = 24.0
SAMPLING_TO_ABX_H = 72.0
LABEL_BEFORE_ONSET_H = 6.0
LABEL_AFTER_ONSET_H = 24.0
DELTA_SOFA = 2
DELTA_SOFA_LOOKBACK_H = 24


@dataclass(frozen=True)
class SiWindow:
    """One suspected-infection event and its surrounding window."""

    si_time: float
    definition: str  # fluid-abx | multi-abx

    @property
    def start(self) -> float:
        return self.si_time - SI_BACKWARD_H

    @property
    def end(self) -> float:
        return self.si_time + SI_FORWARD_H

    def covers(self, hour: float) -> bool:
        return self.start <= hour <= self.end


@dataclass
class SepsisAnnotation:
    """Per-stay annotation: SI windows, onset, hourly labels, truncation point."""

    stay_id: str
    si_windows: list[SiWindow] = field(default_factory=list)
    onset: float | None = None
    labels: np.ndarray | None = None
    truncate_after: float | None = None

    @property
    def is_case(self) -> bool:
        return self.onset is not None

    def excluded_mask(self, n_hours: int) -> np.ndarray:
        """Hours past onset+24h, excluded from training and case evaluation."""
        mask = np.zeros(n_hours, dtype=bool)
        if self.truncate_after is not None:
            mask[np.arange(n_hours) > floor(self.truncate_after)] = True
        return mask


def _merge_windows(si_times: list[float], definition: str) -> list[SiWindow]:
    """Collapse overlapping SI windows, keeping the earliest SI time per group."""
    if not si_times:
        return []
    times = sorted(set(si_times))
    merged = [times[0]]
    group_end = times[0] + SI_FORWARD_H
    for t in times[1:]:
        if t - SI_BACKWARD_H <= group_end:
            group_end = max(group_end, t + SI_FORWARD_H)
        else:
            merged.append(t)
            group_end = t + SI_FORWARD_H
    return [SiWindow(t, definition) for t in merged]


def detect_si_fluid_abx(treatments: TreatmentLog) -> list[SiWindow]:
    """SI events from antibiotic + fluid-sampling co-occurrence."""
    si_times = []
    for a in treatments.antibiotics:
        for s in treatments.fluid_samplings:
            if a <= s and s - a <= ABX_TO_SAMPLING_H:
                si_times.append(a)
            elif s <= a and a - s <= SAMPLING_TO_ABX_H:
                si_times.append(s)
    return _merge_windows(si_times, "fluid-abx")


def detect_si_multi_abx(
    treatments: TreatmentLog,
    min_administrations: int = 2,
    max_span: float = 24.0,
) -> list[SiWindow]:
    """SI events from groups of repeated antibiotic administrations.

    An SI event sits at the first administration of any group of at least
    min_administrations distinct administration times spanning <= max_span.
    """
    times = sorted(set(treatments.antibiotics))
    si_times = []
    for i, t in enumerate(times):
        n_close = sum(1 for u in times[i:] if u - t <= max_span)
        if n_close >= min_administrations:
            si_times.append(t)
    return _merge_windows(si_times, "multi-abx")


def detect_onset(sofa: SofaHourly, si_windows: list[SiWindow]) -> int | None:
    """Earliest hour in an SI window where SOFA rose >= 2 vs its trailing-24h min."""
    total = np.asarray(sofa.total)
    n = total.shape[0]
    if n == 0 or not si_windows:
        return None
    in_window = np.zeros(n, dtype=bool)
    hours = np.arange(n)
    for w in si_windows:
        in_window |= (hours >= w.start) & (hours <= w.end)
    if not in_window.any():
        return None
    trailing_min = np.empty(n)
    for t in range(n):
        trailing_min[t] = total[max(0, t - DELTA_SOFA_LOOKBACK_H): t + 1].min()
    qualifies = in_window & (total - trailing_min >= DELTA_SOFA)
    hits = np.nonzero(qualifies)[0]
    return int(hits[0]) if hits.size else None


def build_labels(stay: HourlyStay, onset: float | None, si_windows=None) -> SepsisAnnotation:
    """Per-hour binary labels: 1 on hours within [onset-6, onset+24], clipped
    to the stay; data past onset+24 is flagged excluded. Controls get zeros."""
    n = stay.n_hours
    labels = np.zeros(n, dtype=int)
    if onset is None:
        return SepsisAnnotation(stay.stay_id, si_windows or [], None, labels, None)
    if not (0 <= onset < n):
        raise ValueError(f"stay {stay.stay_id}: onset {onset} outside the hourly grid [0, {n})")
    lo = max(0, ceil(onset - LABEL_BEFORE_ONSET_H))
    hi = min(n - 1, floor(onset + LABEL_AFTER_ONSET_H))
    labels[lo: hi + 1] = 1
    return SepsisAnnotation(
        stay.stay_id, si_windows or [], float(onset), labels,
        truncate_after=float(onset) + LABEL_AFTER_ONSET_H,
    )


def annotate_stay(
    stay: HourlyStay,
    sofa: SofaHourly,
    treatments: TreatmentLog,
    si_definition: str = "fluid-abx",
    multi_abx_params: dict | None = None,
) -> SepsisAnnotation:
    """Full annotation for one stay under the chosen SI definition."""
    if si_definition == "fluid-abx":
        windows = detect_si_fluid_abx(treatments)
    elif si_definition == "multi-abx":
        windows = detect_si_multi_abx(treatments, **(multi_abx_params or {}))
    else:
        raise ValueError(f"unknown SI definition {si_definition!r}")
    onset = detect_onset(sofa, windows)
    return build_labels(stay, onset, windows)


def jaccard_si(a: set, b: set) -> float:
    """Jaccard similarity of two flagged-stay sets; 1.0 when both are empty."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)
