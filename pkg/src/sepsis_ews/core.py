"""Domain types and the harmonization steps shared by the whole pipeline.

Raw long-format events are converted to canonical units, filtered against
plausible ranges, and resampled onto an hourly per-stay grid (median per
hour, half-open buckets [t, t+1)). Carry-forward fills the grid for the
score and feature consumers; counts always describe the pre-carry grid.

Two call styles are provided for the event-level steps: scalar functions
over single ``RawEvent`` objects (the contract surface) and vectorized
DataFrame equivalents used by the CLI on full cohorts. Both implement the
same rules and are pinned against each other in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import ceil, isfinite

import numpy as np
import pandas as pd

from .catalog import VariableCatalog


@dataclass(frozen=True)
class RawEvent:
    """One timestamped measurement for one stay (time in hours from ICU admission)."""

    stay_id: str
    variable: str
    time: float
    value: float
    unit: str

    def validate(self) -> None:
        if not (isfinite(self.time) and isfinite(self.value)):
            raise ValueError(f"non-finite event for stay {self.stay_id}: {self}")


@dataclass(frozen=True)
class StayStatic:
    """Demographics and stay-level metadata."""

    stay_id: str
    age: float
    sex: str  # female | male | other
    height: float | None
    weight: float | None
    icu_los_hours: float
    site_id: str = "site0"

    def __post_init__(self):
        if not self.icu_los_hours > 0:
            raise ValueError(f"stay {self.stay_id}: icu-length-of-stay must be positive")


@dataclass(frozen=True)
class VasoEpisode:
    agent: str  # norepinephrine | epinephrine | dopamine | dobutamine
    start: float
    end: float
    rate: float  # ug/kg/min

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"vasopressor interval reversed: {self}")


@dataclass(frozen=True)
class Interval:
    start: float
    end: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"interval reversed: {self}")


@dataclass
class TreatmentLog:
    """Treatment records for one stay, in hours from ICU admission."""

    stay_id: str
    antibiotics: list[float] = field(default_factory=list)
    fluid_samplings: list[float] = field(default_factory=list)
    vasopressors: list[VasoEpisode] = field(default_factory=list)
    ventilation: list[Interval] = field(default_factory=list)
    sedation: list[Interval] = field(default_factory=list)

    @classmethod
    def empty(cls, stay_id: str) -> "TreatmentLog":
        return cls(stay_id=stay_id)


@dataclass
class HourlyStay:
    """Per-stay hourly grid. Hour t covers [t, t+1); n_hours = ceil(icu LOS).

    values[v] is a float array with NaN for absent hours; counts[v] holds the
    number of raw in-ICU measurements per hour. baselines carries the latest
    pre-ICU value per variable and is only populated when the ingest ran with
    include_pre_icu; carry_forward seeds from it.
    """

    stay_id: str
    static: StayStatic
    n_hours: int
    values: dict[str, np.ndarray]
    counts: dict[str, np.ndarray]
    baselines: dict[str, float] = field(default_factory=dict)
    carried_forward: bool = False

    def value_array(self, variable: str) -> np.ndarray:
        if variable in self.values:
            return self.values[variable]
        return np.full(self.n_hours, np.nan)

    def count_array(self, variable: str) -> np.ndarray:
        if variable in self.counts:
            return self.counts[variable]
        return np.zeros(self.n_hours, dtype=int)

    def measured_hours(self) -> np.ndarray:
        """Boolean mask of hours with at least one measurement of any variable."""
        mask = np.zeros(self.n_hours, dtype=bool)
        for c in self.counts.values():
            mask |= c > 0
        return mask


@dataclass(frozen=True)
class RejectedEvent:
    event: RawEvent
    reason: str


def convert_to_canonical(event: RawEvent, catalog: VariableCatalog) -> RawEvent:
    """Express an event in its variable's canonical unit via the catalog's affine map.

    Identity when the unit already is canonical. Raises KeyError for an
    unknown variable and ValueError for a unit with no listed conversion.
    """
    if event.variable not in catalog:
        raise KeyError(f"unknown variable {event.variable!r}")
    entry = catalog[event.variable]
    try:
        converted = entry.convert(event.value, event.unit)
    except KeyError as exc:
        raise ValueError(str(exc)) from exc
    return replace(event, value=converted, unit=entry.unit)


def plausibility_filter(
    events: list[RawEvent], catalog: VariableCatalog
) -> tuple[list[RawEvent], list[RejectedEvent]]:
    """Split canonical events into in-range and out-of-range (with the violated bound)."""
    kept: list[RawEvent] = []
    rejected: list[RejectedEvent] = []
    for ev in events:
        entry = catalog[ev.variable]
        if entry.in_range(ev.value):
            kept.append(ev)
        elif ev.value < entry.plausible_min:
            rejected.append(RejectedEvent(ev, f"below plausible-min {entry.plausible_min}"))
        else:
            rejected.append(RejectedEvent(ev, f"above plausible-max {entry.plausible_max}"))
    return kept, rejected


def resample_hourly(
    events: list[RawEvent],
    static: StayStatic,
    include_pre_icu: bool = False,
) -> tuple[HourlyStay, dict]:
    """Aggregate one stay's canonical, filtered events onto the hourly grid.

    values[v][t] = median of measurements with time in [t, t+1); counts the
    number of such measurements. Events before ICU admission are dropped
    (counted in the report) unless include_pre_icu is set, in which case the
    latest pre-ICU value per variable seeds the carry-forward baseline.
    Events at or beyond n_hours are dropped and counted.
    """
    n_hours = int(ceil(static.icu_los_hours))
    buckets: dict[str, dict[int, list[float]]] = {}
    baselines: dict[str, tuple[float, float]] = {}  # variable -> (time, value)
    n_pre_icu = 0
    n_beyond = 0
    for ev in events:
        if ev.stay_id != static.stay_id:
            raise ValueError(f"event stay {ev.stay_id!r} does not match {static.stay_id!r}")
        ev.validate()
        if ev.time < 0:
            n_pre_icu += 1
            if include_pre_icu:
                prev = baselines.get(ev.variable)
                if prev is None or ev.time >= prev[0]:
                    baselines[ev.variable] = (ev.time, ev.value)
            continue
        hour = int(ev.time)
        if hour >= n_hours:
            n_beyond += 1
            continue
        buckets.setdefault(ev.variable, {}).setdefault(hour, []).append(ev.value)

    values: dict[str, np.ndarray] = {}
    counts: dict[str, np.ndarray] = {}
    for var, per_hour in buckets.items():
        v = np.full(n_hours, np.nan)
        c = np.zeros(n_hours, dtype=int)
        for hour, vals in per_hour.items():
            v[hour] = float(np.median(vals))
            c[hour] = len(vals)
        values[var] = v
        counts[var] = c

    stay = HourlyStay(
        stay_id=static.stay_id,
        static=static,
        n_hours=n_hours,
        values=values,
        counts=counts,
        baselines={v: val for v, (_, val) in baselines.items()} if include_pre_icu else {},
    )
    report = {"n_pre_icu_dropped": 0 if include_pre_icu else n_pre_icu,
              "n_pre_icu_folded": n_pre_icu if include_pre_icu else 0,
              "n_beyond_stay": n_beyond}
    return stay, report


def _ffill(arr: np.ndarray, seed: float = np.nan) -> np.ndarray:
    """Forward-fill NaNs; hours before the first observation get the seed."""
    n = arr.shape[0]
    mask = ~np.isnan(arr)
    idx = np.where(mask, np.arange(1, n + 1), 0)
    np.maximum.accumulate(idx, out=idx)
    padded = np.concatenate(([seed], arr))
    return padded[idx]


def carry_forward(stay: HourlyStay) -> HourlyStay:
    """Last-observation carry-forward over the value grids (counts untouched).

    Idempotent; leading gaps stay absent unless a pre-ICU baseline was folded
    in at ingest. No expiry horizon within a stay.
    """
    filled = {}
    for var, arr in stay.values.items():
        seed = stay.baselines.get(var, np.nan)
        filled[var] = _ffill(arr, seed)
    # Variables observed only before ICU admission still seed the grid.
    for var, val in stay.baselines.items():
        if var not in filled:
            filled[var] = np.full(stay.n_hours, val)
    return HourlyStay(
        stay_id=stay.stay_id,
        static=stay.static,
        n_hours=stay.n_hours,
        values=filled,
        counts=stay.counts,
        baselines=dict(stay.baselines),
        carried_forward=True,
    )


# ---------------------------------------------------------------------------
# Vectorized cohort-level equivalents (pandas), used by ingest and synth loops.
# ---------------------------------------------------------------------------

def convert_events_frame(events: pd.DataFrame, catalog: VariableCatalog) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Vectorized convert_to_canonical over a long events frame.

    Returns (converted, rejected) where rejected carries a reason column for
    unknown variables / units. Columns: stay_id, variable, time_hours, value, unit.
    """
    df = events.reset_index(drop=True).copy()
    reason = np.full(len(df), "", dtype=object)
    known = df["variable"].isin(catalog.names()).to_numpy()
    reason[~known] = "unknown-variable"

    canon_by_var = {v.name: v.unit.strip().lower() for v in catalog}
    unit_by_var = {v.name: v.unit for v in catalog}
    unit_norm = df["unit"].astype(str).str.strip().str.lower().to_numpy()
    canon_norm = df["variable"].map(canon_by_var).to_numpy()
    value = df["value"].to_numpy(dtype=float).copy()
    unit_out = df["variable"].map(unit_by_var).to_numpy(dtype=object)
    unit_out[~known] = df["unit"].to_numpy(dtype=object)[~known]

    needs_conversion = known & (unit_norm != canon_norm)
    if needs_conversion.any():
        sub = df.loc[needs_conversion]
        sub_pos = np.nonzero(needs_conversion)[0]
        for var, grp_idx in sub.groupby("variable", sort=False).groups.items():
            entry = catalog[var]
            pos = sub_pos[sub.index.get_indexer(grp_idx)]
            units_here = unit_norm[pos]
            matched = np.zeros(pos.shape[0], dtype=bool)
            for unit, (ca, cb) in entry.conversions.items():
                if unit == canon_by_var[var]:
                    continue
                hit = units_here == unit
                p = pos[hit]
                value[p] = value[p] * ca + cb
                matched |= hit
            reason[pos[~matched]] = "unknown-unit"

    ok = reason == ""
    out = df.loc[ok].copy()
    out["value"] = value[ok]
    out["unit"] = unit_out[ok]
    rejected = df.loc[~ok].copy()
    rejected["reason"] = reason[~ok]
    return out, rejected


def filter_events_frame(events: pd.DataFrame, catalog: VariableCatalog) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Vectorized plausibility filter over a canonical events frame."""
    lo = events["variable"].map({v.name: v.plausible_min for v in catalog}).to_numpy(dtype=float)
    hi = events["variable"].map({v.name: v.plausible_max for v in catalog}).to_numpy(dtype=float)
    vals = events["value"].to_numpy(dtype=float)
    keep = (vals >= lo) & (vals <= hi)
    rejected = events.loc[~keep].copy()
    if len(rejected):
        rejected["reason"] = np.where(vals[~keep] < lo[~keep], "below plausible-min", "above plausible-max")
    else:
        rejected = rejected.assign(reason=pd.Series(dtype=str))
    return events.loc[keep], rejected


def resample_cohort(
    events: pd.DataFrame,
    statics: dict[str, StayStatic],
    include_pre_icu: bool = False,
) -> tuple[dict[str, HourlyStay], dict]:
    """Resample a whole cohort's canonical filtered events in one pass.

    Equivalent to calling resample_hourly per stay; grouped medians make this
    fast enough for multi-thousand-stay cohorts.
    """
    report = {"n_pre_icu_dropped": 0, "n_pre_icu_folded": 0, "n_beyond_stay": 0}
    stays: dict[str, HourlyStay] = {}
    n_hours_by_stay = {sid: int(ceil(st.icu_los_hours)) for sid, st in statics.items()}

    df = events
    unknown = set(df["stay_id"].unique()) - set(statics)
    if unknown:
        raise ValueError(f"events reference stays without static records: {sorted(unknown)[:5]}")

    pre = df["time_hours"].to_numpy() < 0
    pre_df = df.loc[pre]
    df = df.loc[~pre]
    if include_pre_icu:
        report["n_pre_icu_folded"] = int(len(pre_df))
    else:
        report["n_pre_icu_dropped"] = int(len(pre_df))

    limits = df["stay_id"].map(n_hours_by_stay).to_numpy()
    hours = df["time_hours"].to_numpy().astype(int)
    beyond = hours >= limits
    report["n_beyond_stay"] = int(beyond.sum())
    df = df.loc[~beyond]
    hours = hours[~beyond]

    grouped = (
        df.assign(hour=hours)
        .groupby(["stay_id", "variable", "hour"], sort=True)["value"]
        .agg(["median", "size"])
        .reset_index()
    )

    baselines_by_stay: dict[str, dict[str, float]] = {}
    if include_pre_icu and len(pre_df):
        latest = (
            pre_df.sort_values("time_hours")
            .groupby(["stay_id", "variable"], sort=False)["value"]
            .last()
        )
        for (sid, var), val in latest.items():
            baselines_by_stay.setdefault(sid, {})[var] = float(val)

    for sid, st in statics.items():
        n = n_hours_by_stay[sid]
        stays[sid] = HourlyStay(
            stay_id=sid, static=st, n_hours=n, values={}, counts={},
            baselines=baselines_by_stay.get(sid, {}),
        )

    sids = grouped["stay_id"].to_numpy()
    variables = grouped["variable"].to_numpy()
    hour_idx = grouped["hour"].to_numpy()
    medians = grouped["median"].to_numpy()
    sizes = grouped["size"].to_numpy()
    if len(grouped):
        change = np.nonzero((sids[1:] != sids[:-1]) | (variables[1:] != variables[:-1]))[0] + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [len(grouped)]))
        for s, e in zip(starts, ends):
            stay = stays[sids[s]]
            v = np.full(stay.n_hours, np.nan)
            c = np.zeros(stay.n_hours, dtype=int)
            idx = hour_idx[s:e]
            v[idx] = medians[s:e]
            c[idx] = sizes[s:e]
            stay.values[variables[s]] = v
            stay.counts[variables[s]] = c
    return stays, report
