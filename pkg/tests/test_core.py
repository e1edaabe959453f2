"""Unit conversion, plausibility filtering, hourly resampling, carry-forward."""

import numpy as np
import pandas as pd
import pytest

from sepsis_ews.catalog import default_catalog
from sepsis_ews.core import (RawEvent, StayStatic, carry_forward, convert_events_frame,
                             convert_to_canonical, filter_events_frame,
                             plausibility_filter, resample_cohort, resample_hourly)

CAT = default_catalog()


def ev(variable, time, value, unit, stay="a"):
    return RawEvent(stay_id=stay, variable=variable, time=time, value=value, unit=unit)


def static(stay="a", los=10.0, **kw):
    defaults = dict(age=50.0, sex="female", height=170.0, weight=70.0)
    defaults.update(kw)
    return StayStatic(stay_id=stay, icu_los_hours=los, site_id="site0", **defaults)


class TestConvert:
    def test_fahrenheit_to_celsius_exact(self):
        out = convert_to_canonical(ev("temp", 1.0, 98.6, "°F"), CAT)
        assert out.value == pytest.approx(37.0, abs=1e-12)
        assert out.unit == "C"

    def test_identity_when_canonical(self):
        out = convert_to_canonical(ev("hr", 1.0, 80.0, "bpm"), CAT)
        assert out.value == 80.0 and out.unit == "bpm"

    def test_glucose_mmol_to_mgdl(self):
        # 5.0 mmol/L * 18.018 = 90.09 mg/dL, cross-checked against an
        # independent unit-conversion table
        out = convert_to_canonical(ev("glu", 1.0, 5.0, "mmol/L"), CAT)
        assert out.value == pytest.approx(90.09, abs=1e-9)
        assert out.unit == "mg/dL"

    def test_unknown_unit_rejected(self):
        with pytest.raises(ValueError):
            convert_to_canonical(ev("hr", 1.0, 80.0, "furlongs"), CAT)

    def test_unknown_variable_rejected(self):
        with pytest.raises(KeyError):
            convert_to_canonical(ev("nope", 1.0, 80.0, "bpm"), CAT)

    def test_idempotent_once_canonical(self):
        once = convert_to_canonical(ev("temp", 1.0, 98.6, "F"), CAT)
        twice = convert_to_canonical(once, CAT)
        assert twice == once

    def test_frame_path_matches_scalar_path(self):
        rows = [
            ("a", "temp", 1.0, 98.6, "°F"),
            ("a", "temp", 2.0, 37.2, "C"),
            ("a", "glu", 1.5, 5.0, "mmol/L"),
            ("b", "hr", 0.5, 82.0, "bpm"),
            ("b", "hr", 0.7, 82.0, "watts"),
            ("b", "mystery", 0.7, 1.0, "bpm"),
        ]
        df = pd.DataFrame(rows, columns=["stay_id", "variable", "time_hours", "value", "unit"])
        out, rejected = convert_events_frame(df, CAT)
        assert len(out) == 4 and len(rejected) == 2
        assert set(rejected["reason"]) == {"unknown-unit", "unknown-variable"}
        for row in df.itertuples(index=False):
            raw = RawEvent(row.stay_id, row.variable, row.time_hours, row.value, row.unit)
            match = out[(out.stay_id == row.stay_id) & (out.variable == row.variable)
                        & (out.time_hours == row.time_hours)]
            try:
                scalar = convert_to_canonical(raw, CAT)
            except (KeyError, ValueError):
                continue
            assert match["value"].iloc[0] == pytest.approx(scalar.value, abs=1e-12)
            assert match["unit"].iloc[0] == scalar.unit


class TestPlausibility:
    def test_hr_300_rejected_against_catalog_max(self):
        kept, rejected = plausibility_filter([ev("hr", 1.0, 300.0, "bpm")], CAT)
        assert not kept and len(rejected) == 1
        assert "250" in rejected[0].reason

    def test_hr_80_kept(self):
        kept, rejected = plausibility_filter([ev("hr", 1.0, 80.0, "bpm")], CAT)
        assert len(kept) == 1 and not rejected

    def test_empty_input(self):
        assert plausibility_filter([], CAT) == ([], [])

    def test_bounds_inclusive(self):
        kept, _ = plausibility_filter([ev("hr", 1.0, 250.0, "bpm"), ev("hr", 1.0, 0.0, "bpm")], CAT)
        assert len(kept) == 2

    def test_frame_path_matches(self):
        df = pd.DataFrame(
            [("a", "hr", 1.0, 300.0, "bpm"), ("a", "hr", 1.0, 80.0, "bpm")],
            columns=["stay_id", "variable", "time_hours", "value", "unit"])
        kept, rejected = filter_events_frame(df, CAT)
        assert len(kept) == 1 and len(rejected) == 1
        assert rejected["reason"].iloc[0] == "above plausible-max"


class TestResample:
    def test_median_per_hour(self):
        events = [ev("map", 0.2, 65.0, "mmHg"), ev("map", 0.5, 70.0, "mmHg"), ev("map", 0.9, 80.0, "mmHg")]
        stay, _ = resample_hourly(events, static())
        assert stay.values["map"][0] == 70.0
        assert stay.counts["map"][0] == 3

    def test_even_count_median_is_midpoint(self):
        events = [ev("hr", 3.1, 100.0, "bpm"), ev("hr", 3.8, 110.0, "bpm")]
        stay, _ = resample_hourly(events, static())
        assert stay.values["hr"][3] == 105.0

    def test_empty_hour_absent_with_zero_count(self):
        stay, _ = resample_hourly([ev("hr", 1.5, 80.0, "bpm")], static())
        assert np.isnan(stay.values["hr"][7])
        assert stay.counts["hr"][7] == 0

    def test_mismatched_stay_id_raises(self):
        with pytest.raises(ValueError):
            resample_hourly([ev("hr", 1.0, 80.0, "bpm", stay="b")], static(stay="a"))

    def test_n_hours_is_ceil_of_los(self):
        stay, _ = resample_hourly([], static(los=10.5))
        assert stay.n_hours == 11

    def test_pre_icu_dropped_by_default(self):
        events = [ev("hr", -2.0, 90.0, "bpm"), ev("hr", 0.5, 80.0, "bpm")]
        stay, report = resample_hourly(events, static())
        assert report["n_pre_icu_dropped"] == 1
        assert stay.counts["hr"].sum() == 1
        assert not stay.baselines

    def test_pre_icu_folds_into_lookback_state_with_flag(self):
        events = [ev("hr", -5.0, 95.0, "bpm"), ev("hr", -2.0, 90.0, "bpm")]
        stay, report = resample_hourly(events, static(), include_pre_icu=True)
        assert report["n_pre_icu_folded"] == 2
        assert stay.baselines["hr"] == 90.0  # latest pre-ICU value
        assert stay.counts.get("hr") is None or stay.counts["hr"].sum() == 0
        filled = carry_forward(stay)
        assert np.all(filled.values["hr"] == 90.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        events = [ev("hr", float(t), float(v), "bpm")
                  for t, v in zip(rng.uniform(0, 10, 40), rng.uniform(40, 120, 40))]
        a, _ = resample_hourly(events, static())
        order = rng.permutation(len(events))
        b, _ = resample_hourly([events[i] for i in order], static())
        np.testing.assert_array_equal(a.counts["hr"], b.counts["hr"])
        np.testing.assert_allclose(a.values["hr"], b.values["hr"], equal_nan=True)

    def test_median_between_hourly_min_and_max(self):
        rng = np.random.default_rng(1)
        events = [ev("hr", float(t), float(v), "bpm")
                  for t, v in zip(rng.uniform(0, 10, 100), rng.uniform(40, 120, 100))]
        stay, _ = resample_hourly(events, static())
        for t in range(stay.n_hours):
            in_hour = [e.value for e in events if t <= e.time < t + 1]
            if in_hour:
                assert min(in_hour) <= stay.values["hr"][t] <= max(in_hour)

    def test_counts_sum_equals_kept_in_icu_events(self):
        rng = np.random.default_rng(2)
        events = [ev("hr", float(t), 80.0, "bpm") for t in rng.uniform(-3, 12, 60)]
        stay, report = resample_hourly(events, static(los=10.0))
        n_in_icu = sum(1 for e in events if 0 <= e.time < 10)
        assert stay.counts["hr"].sum() == n_in_icu
        assert report["n_pre_icu_dropped"] + report["n_beyond_stay"] + n_in_icu == 60

    def test_counts_zero_iff_value_absent(self):
        rng = np.random.default_rng(3)
        events = [ev("hr", float(t), 80.0, "bpm") for t in rng.uniform(0, 6, 10)]
        stay, _ = resample_hourly(events, static())
        absent = np.isnan(stay.values["hr"])
        np.testing.assert_array_equal(absent, stay.counts["hr"] == 0)

    def test_cohort_path_matches_per_stay_path(self):
        rng = np.random.default_rng(4)
        rows = []
        statics = {}
        for sid in ("a", "b", "c"):
            statics[sid] = static(stay=sid, los=8.0)
            for _ in range(30):
                rows.append((sid, "hr", float(rng.uniform(-1, 9)), float(rng.uniform(50, 120)), "bpm"))
        df = pd.DataFrame(rows, columns=["stay_id", "variable", "time_hours", "value", "unit"])
        cohort, _ = resample_cohort(df, statics)
        for sid in statics:
            events = [ev("hr", r[2], r[3], "bpm", stay=sid) for r in rows if r[0] == sid]
            single, _ = resample_hourly(events, statics[sid])
            np.testing.assert_allclose(cohort[sid].values["hr"], single.values["hr"], equal_nan=True)
            np.testing.assert_array_equal(cohort[sid].counts["hr"], single.counts["hr"])


class TestCarryForward:
    def _stay(self, values, counts=None):
        n = len(values)
        arr = np.array([np.nan if v is None else float(v) for v in values])
        cnt = np.array(counts if counts is not None else [0 if v is None else 1 for v in values])
        st = static(los=float(n))
        from sepsis_ews.core import HourlyStay
        return HourlyStay(stay_id="a", static=st, n_hours=n, values={"hr": arr}, counts={"hr": cnt})

    def test_basic_fill(self):
        out = carry_forward(self._stay([5, None, None, 7]))
        np.testing.assert_array_equal(out.values["hr"], [5, 5, 5, 7])

    def test_leading_gap_preserved(self):
        out = carry_forward(self._stay([None, None, 3]))
        assert np.isnan(out.values["hr"][0]) and np.isnan(out.values["hr"][1])
        assert out.values["hr"][2] == 3

    def test_all_absent_unchanged(self):
        out = carry_forward(self._stay([None, None, None]))
        assert np.isnan(out.values["hr"]).all()

    def test_idempotent(self):
        stay = self._stay([None, 4, None, 9, None])
        once = carry_forward(stay)
        twice = carry_forward(once)
        np.testing.assert_allclose(once.values["hr"], twice.values["hr"], equal_nan=True)

    def test_counts_untouched(self):
        stay = self._stay([5, None, 7])
        out = carry_forward(stay)
        np.testing.assert_array_equal(out.counts["hr"], stay.counts["hr"])

    def test_never_introduces_values_into_unobserved_variable(self):
        stay = self._stay([None, None, None])
        out = carry_forward(stay)
        assert np.isnan(out.values["hr"]).all()
        assert "map" not in out.values
