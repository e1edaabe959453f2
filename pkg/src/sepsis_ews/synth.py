"""Deterministic synthetic-cohort generator with planted ground truth.

The generator and the labeling pipeline share no code for the SI / SOFA
rules, so recovering every planted onset exactly is a meaningful closed-loop
check on both sides.

Construction principles:

* Control physiology is drawn from truncated normals confined to the
  zero-point zones of every SOFA component, so the hourly SOFA total is 0
  throughout a control stay by construction.
* Every regular stay (cases AND controls) receives one "deterioration
  episode": platelets drop into the 2-point band at a planted hour. Cases
  additionally receive an antibiotics + fluid-sampling pair whose SI window
  covers that hour, which is what turns the same deterioration into a
  Sepsis-3 onset. Controls carry no treatments at all, so with zero signal
  strength the measurement stream holds no case/control information
  (treatments are never model inputs).
* signal_strength > 0 adds a pre-onset ramp (over the 12h before onset) to a
  set of non-SOFA vitals/labs of cases only, giving models a learnable and
  tunable signal.
* Optional exclusion specimens deliberately violate one filter rule each.

Output is fully determined by the seed: per-stay RNGs derive from
SeedSequence(seed, stay_index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import floor

import numpy as np
import pandas as pd


class InfeasibleConfig(ValueError):
    """Raised when the requested geometry cannot be generated."""


# baseline draws: variable -> (mean, sd, lo, hi); all zero-SOFA-zone safe
BASELINES = {
    "hr": (80.0, 10.0, 55.0, 115.0),
    "map": (85.0, 8.0, 72.0, 110.0),
    "sbp": (120.0, 12.0, 95.0, 160.0),
    "dbp": (65.0, 8.0, 45.0, 90.0),
    "resp": (16.0, 2.5, 10.0, 22.0),
    "temp": (36.8, 0.35, 35.9, 37.9),
    "o2sat": (97.0, 1.2, 93.0, 100.0),
    "urine": (100.0, 20.0, 60.0, 160.0),
    "plt": (250.0, 40.0, 170.0, 400.0),
    "bili": (0.6, 0.2, 0.1, 1.1),
    "crea": (0.8, 0.15, 0.4, 1.15),
    "wbc": (8.0, 1.5, 4.5, 11.5),
    "lact": (1.2, 0.3, 0.4, 2.2),
    "bun": (15.0, 4.0, 6.0, 28.0),
    "po2": (95.0, 6.0, 86.0, 115.0),
    "fio2": (21.0, 0.0, 21.0, 21.0),
    "glu": (110.0, 20.0, 70.0, 180.0),
    "na": (139.0, 3.0, 128.0, 150.0),
    "k": (4.1, 0.4, 3.0, 5.5),
}

CANONICAL_UNITS = {
    "hr": "bpm", "map": "mmHg", "sbp": "mmHg", "dbp": "mmHg", "resp": "1/min",
    "temp": "C", "o2sat": "%", "urine": "mL", "plt": "1000/uL", "bili": "mg/dL",
    "crea": "mg/dL", "wbc": "1000/uL", "lact": "mmol/L", "bun": "mg/dL",
    "po2": "mmHg", "fio2": "%", "glu": "mg/dL", "na": "mmol/L", "k": "mmol/L",
}

VITALS = ("hr", "map", "sbp", "dbp", "resp", "temp", "o2sat", "urine")
LABS = tuple(v for v in BASELINES if v not in VITALS)

DEFAULT_RATES = {**{v: 1.0 for v in VITALS}, **{v: 0.25 for v in LABS}}

# pre-onset drift amplitudes at signal_strength = 1 (none is a SOFA input)
DRIFT_AMPLITUDE = {"hr": 10.0, "resp": 3.0, "temp": 0.5, "lact": 0.8, "wbc": 2.5}
DRIFT_RAMP_HOURS = 12.0

# deterioration: platelets into the 2-point coagulation band
DETERIORATED_PLT = (75.0, 7.0, 58.0, 92.0)

# per-site mean shifts (in baseline sd units) applied to these variables
SITE_SHIFT_VARIABLES = ("hr", "sbp", "dbp", "glu", "na")

SPECIMEN_KINDS = ("non-adult", "short-stay", "sparse-measurements", "long-gap",
                  "onset-too-early", "onset-too-late")

ONSET_MIN_H = 6
ONSET_MAX_H = 160


@dataclass(frozen=True)
class SynthConfig:
    n_stays: int = 200
    case_fraction: float = 0.25
    seed: int = 0
    los_range: tuple[float, float] = (24.0, 72.0)
    signal_strength: float = 0.0
    site_count: int = 1
    site_prevalence_offsets: tuple[float, ...] = ()
    site_feature_shift: float = 0.0
    multi_abx_fraction: float = 0.7
    n_exclusion_sets: int = 0
    measurement_rates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.case_fraction <= 1.0:
            raise InfeasibleConfig("case_fraction must be in [0, 1]")
        if self.los_range[0] > self.los_range[1] or self.los_range[0] <= 0:
            raise InfeasibleConfig("bad los_range")
        if self.los_range[0] < ONSET_MIN_H + 5:
            raise InfeasibleConfig(
                f"los_range minimum {self.los_range[0]} leaves no room for an onset "
                f"at hour {ONSET_MIN_H} with post-onset data")
        if self.site_count < 1:
            raise InfeasibleConfig("site_count must be >= 1")
        if self.site_prevalence_offsets and len(self.site_prevalence_offsets) != self.site_count:
            raise InfeasibleConfig("site_prevalence_offsets length must equal site_count")
        if any(r <= 0 for r in self.measurement_rates.values()):
            raise InfeasibleConfig("measurement rates must be positive")
        if self.n_exclusion_sets * len(SPECIMEN_KINDS) > self.n_stays:
            raise InfeasibleConfig("more exclusion specimens than stays")


@dataclass
class GroundTruthRow:
    stay_id: str
    onset_hour: int | None
    si_time: float | None
    exclusion_reason: str | None
    site_id: str
    multi_abx: bool


@dataclass
class SynthCohort:
    events: pd.DataFrame
    static: pd.DataFrame
    treatments: pd.DataFrame
    ground_truth: list[GroundTruthRow]

    def ground_truth_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"stay_id": r.stay_id,
              "onset_hour": r.onset_hour,
              "si_time": r.si_time,
              "exclusion_reason": r.exclusion_reason} for r in self.ground_truth]
        )


class _StayBuilder:
    def __init__(self, stay_id: str, rng: np.random.Generator, rates: dict, site_shift: float):
        self.stay_id = stay_id
        self.rng = rng
        self.rates = rates
        self.site_shift = site_shift
        self.var: list[str] = []
        self.time: list[float] = []
        self.value: list[float] = []

    def _draw(self, variable: str, n: int, mean_shift: float = 0.0) -> np.ndarray:
        mean, sd, lo, hi = BASELINES[variable]
        if variable in SITE_SHIFT_VARIABLES:
            mean_shift += self.site_shift * sd
        if sd == 0.0:
            return np.full(n, mean + mean_shift)
        vals = self.rng.normal(mean, sd, size=n)
        np.clip(vals, lo, hi, out=vals)
        return vals + mean_shift

    def measurement_hours(self, variable: str, hours: np.ndarray) -> np.ndarray:
        rate = self.rates.get(variable, 0.0)
        if rate >= 1.0:
            return hours
        return hours[self.rng.random(hours.shape[0]) < rate]

    def emit(self, variable: str, hours: np.ndarray, values: np.ndarray) -> None:
        jitter = self.rng.random(hours.shape[0])
        self.var.extend([variable] * hours.shape[0])
        self.time.extend((hours + jitter).tolist())
        self.value.extend(values.tolist())

    def baseline_series(self, variable: str, hours: np.ndarray,
                        drift_center: float | None = None, drift_scale: float = 0.0) -> None:
        """Emit measurements on the given hours; optional pre-onset ramp."""
        picked = self.measurement_hours(variable, hours)
        if variable in ("plt", "fio2", "po2") and 0 not in picked and 0 in hours:
            picked = np.concatenate(([0], picked))  # anchor the carry-forward state
        if picked.size == 0:
            return
        shift = 0.0
        if drift_center is not None and drift_scale > 0.0 and variable in DRIFT_AMPLITUDE:
            ramp = np.clip((picked - (drift_center - DRIFT_RAMP_HOURS)) / DRIFT_RAMP_HOURS, 0.0, 1.0)
            vals = self._draw(variable, picked.size) + drift_scale * DRIFT_AMPLITUDE[variable] * ramp
        else:
            vals = self._draw(variable, picked.size) + shift
        self.emit(variable, picked, vals)


def _build_regular_stay(
    builder: _StayBuilder, los: float, deterioration_hour: int, signal: float
) -> None:
    """Stationary draws plus the platelet deterioration at the planted hour."""
    n_hours = int(np.ceil(los))
    hours = np.arange(n_hours)
    t = deterioration_hour
    for v in BASELINES:
        if v == "plt":
            continue
        builder.baseline_series(v, hours, drift_center=float(t) if signal > 0 else None,
                                drift_scale=signal)
    # platelets: baseline strictly before the deterioration, deteriorated after
    pre = builder.measurement_hours("plt", hours[hours < t])
    if 0 not in pre:
        pre = np.concatenate(([0], pre))
    builder.emit("plt", pre, builder._draw("plt", pre.size))
    post = builder.measurement_hours("plt", hours[hours > t])
    post = np.concatenate(([t], post))  # forced measurement inside the onset hour
    mean, sd, lo, hi = DETERIORATED_PLT
    vals = np.clip(builder.rng.normal(mean, sd, size=post.size), lo, hi)
    builder.emit("plt", post, vals)


def _case_treatments(rng: np.random.Generator, onset: int, multi_abx: bool) -> tuple[list, float, list[float]]:
    """Antibiotics + sampling pair whose SI window covers the onset hour."""
    rows = []
    if rng.random() < 0.5:
        abx = onset - rng.uniform(1.0, 6.0)
        samp = abx + rng.uniform(1.0, 12.0)
        si_time = abx
    else:
        samp = onset - rng.uniform(1.0, 6.0)
        abx = samp + rng.uniform(1.0, 24.0)
        si_time = samp
    abx_times = [abx]
    if multi_abx:
        abx_times.append(abx + rng.uniform(2.0, 20.0))
    for t in abx_times:
        rows.append({"kind": "abx", "agent": "", "start_hours": t, "end_hours": None, "rate": None})
    rows.append({"kind": "fluid_sampling", "agent": "", "start_hours": samp, "end_hours": None, "rate": None})
    return rows, float(si_time), abx_times


def generate(cfg: SynthConfig) -> SynthCohort:
    """Generate one synthetic cohort with its ground truth."""
    rates = {**DEFAULT_RATES, **cfg.measurement_rates}
    events_parts = []
    static_rows = []
    treatment_rows = []
    truth: list[GroundTruthRow] = []

    n_specimens = cfg.n_exclusion_sets * len(SPECIMEN_KINDS)
    for idx in range(cfg.n_stays):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, idx)))
        sid = f"s{idx:05d}"
        site_idx = idx % cfg.site_count
        site = f"site{site_idx}"
        shift_center = (cfg.site_count - 1) / 2.0
        site_shift = cfg.site_feature_shift * (site_idx - shift_center)
        builder = _StayBuilder(sid, rng, rates, site_shift)

        age = float(rng.integers(18, 91))
        sex = "female" if rng.random() < 0.5 else "male"
        height = float(np.round(rng.normal(170, 10), 1)) if rng.random() > 0.1 else None
        weight = float(np.round(rng.normal(78, 15), 1)) if rng.random() > 0.1 else None

        specimen = SPECIMEN_KINDS[idx % len(SPECIMEN_KINDS)] if idx < n_specimens else None
        los = float(np.round(rng.uniform(*cfg.los_range), 2))
        onset: int | None = None
        si_time: float | None = None
        multi = False

        if specimen == "non-adult":
            age = float(rng.integers(2, 14))
            t = int(rng.integers(ONSET_MIN_H, floor(los) - 4))
            _build_regular_stay(builder, los, t, 0.0)
        elif specimen == "short-stay":
            los = 5.0
            for v in VITALS:
                builder.baseline_series(v, np.arange(5))
        elif specimen == "sparse-measurements":
            los = 9.0
            sparse_hours = np.array([0, 3, 6])
            for v in ("hr", "map"):
                builder.emit(v, sparse_hours, builder._draw(v, sparse_hours.size))
        elif specimen == "long-gap":
            los = 48.0
            hours = np.arange(48)
            keep = (hours < 10) | (hours >= 24)  # 14 consecutive empty hours
            for v in VITALS:
                picked = builder.measurement_hours(v, hours[keep])
                if picked.size:
                    builder.emit(v, picked, builder._draw(v, picked.size))
        elif specimen == "onset-too-early":
            los = float(np.round(rng.uniform(24.0, 48.0), 2))
            onset = 2
            _build_regular_stay(builder, los, onset, 0.0)
            treatment_rows.append({"stay_id": sid, "kind": "abx", "agent": "",
                                   "start_hours": 0.5, "end_hours": None, "rate": None})
            treatment_rows.append({"stay_id": sid, "kind": "fluid_sampling", "agent": "",
                                   "start_hours": 1.0, "end_hours": None, "rate": None})
            si_time = 0.5
        elif specimen == "onset-too-late":
            los = 180.0
            onset = 170
            _build_regular_stay(builder, los, onset, 0.0)
            rows, si_time, _ = _case_treatments(rng, onset, multi_abx=False)
            for r in rows:
                treatment_rows.append({"stay_id": sid, **r})
        else:
            # regular stay: case or control per site-adjusted prevalence
            p = cfg.case_fraction
            if cfg.site_prevalence_offsets:
                p = float(np.clip(p + cfg.site_prevalence_offsets[site_idx], 0.0, 1.0))
            is_case = rng.random() < p
            t_hi = min(ONSET_MAX_H, floor(los) - 4)
            t = int(rng.integers(ONSET_MIN_H, t_hi + 1))
            if is_case:
                onset = t
                multi = rng.random() < cfg.multi_abx_fraction
                rows, si_time, _ = _case_treatments(rng, onset, multi)
                for r in rows:
                    treatment_rows.append({"stay_id": sid, **r})
                _build_regular_stay(builder, los, t, cfg.signal_strength)
            else:
                _build_regular_stay(builder, los, t, 0.0)

        static_rows.append({
            "stay_id": sid, "age": age, "sex": sex, "height": height,
            "weight": weight, "icu_los_hours": los, "site_id": site,
        })
        truth.append(GroundTruthRow(sid, onset, si_time, specimen, site, multi))
        events_parts.append(pd.DataFrame({
            "stay_id": sid,
            "variable": builder.var,
            "time_hours": np.round(builder.time, 4),
            "value": np.round(builder.value, 4),
        }))

    events = pd.concat(events_parts, ignore_index=True)
    events["unit"] = events["variable"].map(CANONICAL_UNITS)
    events = events[["stay_id", "variable", "time_hours", "value", "unit"]]
    static = pd.DataFrame(static_rows)
    treatments = pd.DataFrame(
        treatment_rows, columns=["stay_id", "kind", "agent", "start_hours", "end_hours", "rate"]
    )
    return SynthCohort(events, static, treatments, truth)
