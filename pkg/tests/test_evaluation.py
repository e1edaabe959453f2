"""Encounter-level evaluation: grids, sweeps, ROC, interpolation, subsampling."""

import numpy as np
import pytest

from sepsis_ews.evaluation import (EvalConfig, ThresholdMetrics, at_fixed_recall,
                                   encounter_sweep, evaluate_cohort,
                                   harmonize_prevalence, nearest_rank_percentile,
                                   split_dataset, threshold_grid, truncate_case_stream)


class Ann:
    def __init__(self, is_case, onset=None):
        self.is_case = is_case
        self.onset = onset


def brute_force_auroc(streams, annotations):
    """Exhaustive enumeration over every distinct per-stay maximum score."""
    maxima = {}
    for sid, s in streams.items():
        ann = annotations[sid]
        arr = truncate_case_stream(s, ann.onset) if ann.is_case else s
        maxima[sid] = arr.max()
    cases = [m for sid, m in maxima.items() if annotations[sid].is_case]
    controls = [m for sid, m in maxima.items() if not annotations[sid].is_case]
    pts = {(0.0, 0.0), (1.0, 1.0)}
    for th in sorted(set(maxima.values())):
        tpr = sum(1 for m in cases if m >= th) / len(cases)
        fpr = sum(1 for m in controls if m >= th) / len(controls)
        pts.add((fpr, tpr))
    pts = sorted(pts)
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    return float(np.trapezoid(ys, xs))


class TestThresholdGrid:
    def test_uniform_0_to_1000_trims_to_5_995(self):
        scores = np.arange(1001, dtype=float)
        grid, degenerate = threshold_grid(scores, EvalConfig())
        assert not degenerate
        assert grid[0] == 5.0 and grid[-1] == 995.0
        assert len(grid) == 100
        step = (995.0 - 5.0) / 99
        np.testing.assert_allclose(np.diff(grid), step)

    def test_two_scores_keep_full_range(self):
        grid, degenerate = threshold_grid(np.array([0.0, 1.0]), EvalConfig())
        assert not degenerate
        assert grid[0] == 0.0 and grid[-1] == 1.0

    def test_constant_scores_degenerate_flagged(self):
        grid, degenerate = threshold_grid(np.array([3.0, 3.0, 3.0]), EvalConfig())
        assert degenerate and list(grid) == [3.0]

    def test_nearest_rank_percentile_convention(self):
        scores = np.arange(1001, dtype=float)
        assert nearest_rank_percentile(scores, 0.005) == 5.0
        assert nearest_rank_percentile(scores, 0.995) == 995.0
        assert nearest_rank_percentile(np.array([0.0, 1.0]), 0.005) == 0.0
        assert nearest_rank_percentile(np.array([0.0, 1.0]), 0.995) == 1.0


class TestEncounterSweep:
    def test_case_alarm_after_onset_is_tp_with_negative_earliness(self):
        streams = {"a": np.array([-1.0, 0.2, 3.0])}
        anns = {"a": Ann(True, onset=2.0)}
        outcomes, m = encounter_sweep(streams, anns, 1.0)
        assert m.tp == 1 and m.fn == 0
        assert outcomes[0].alarm_time == 2.0
        assert outcomes[0].earliness == 0.0

    def test_control_below_threshold_is_tn(self):
        _, m = encounter_sweep({"a": np.array([0.1, 0.3])}, {"a": Ann(False)}, 1.0)
        assert m.tn == 1 and m.fp == 0

    def test_threshold_below_everything_saturates(self):
        streams = {"a": np.array([1.0]), "b": np.array([2.0]), "c": np.array([0.5])}
        anns = {"a": Ann(True, 0.0), "b": Ann(False), "c": Ann(False)}
        outcomes, m = encounter_sweep(streams, anns, -10.0)
        assert m.tp == 1 and m.fp == 2
        assert all(o.alarm_time == 0.0 for o in outcomes)

    def test_only_first_crossing_counts(self):
        streams = {"a": np.array([0.0, 5.0, 0.0, 9.0])}
        outcomes, _ = encounter_sweep(streams, {"a": Ann(False)}, 1.0)
        assert outcomes[0].alarm_time == 1.0

    def test_case_stream_truncated_at_onset_plus_24(self):
        scores = np.zeros(40)
        scores[30] = 5.0  # past onset+24 for onset 2
        streams = {"a": scores}
        _, m = encounter_sweep(streams, {"a": Ann(True, onset=2.0)}, 1.0)
        assert m.fn == 1 and m.tp == 0

    def test_tie_semantics_ge_vs_gt(self):
        streams = {"a": np.array([1.0])}
        _, m_ge = encounter_sweep(streams, {"a": Ann(False)}, 1.0, alarm_tie="ge")
        _, m_gt = encounter_sweep(streams, {"a": Ann(False)}, 1.0, alarm_tie="gt")
        assert m_ge.fp == 1 and m_gt.fp == 0

    def test_confusion_marginals(self):
        rng = np.random.default_rng(1)
        streams = {f"s{i}": rng.normal(size=6) for i in range(30)}
        anns = {f"s{i}": Ann(i % 3 == 0, onset=2.0 if i % 3 == 0 else None) for i in range(30)}
        for th in np.linspace(-2, 2, 7):
            _, m = encounter_sweep(streams, anns, float(th))
            assert m.tp + m.fn == 10
            assert m.fp + m.tn == 20


class TestRocAuroc:
    def _metrics(self, streams, anns, cfg=None):
        return evaluate_cohort(streams, anns, cfg or EvalConfig())

    def test_perfect_separation_auroc_one(self):
        streams = {"a": np.array([5.0, 6.0]), "b": np.array([6.5]), "c": np.array([1.0, 0.5]),
                   "d": np.array([0.2])}
        anns = {"a": Ann(True, 0.0), "b": Ann(True, 0.0), "c": Ann(False), "d": Ann(False)}
        report = self._metrics(streams, anns)
        assert report.auroc == pytest.approx(1.0)

    def test_constant_scores_auroc_half(self):
        streams = {"a": np.array([2.0, 2.0]), "b": np.array([2.0])}
        anns = {"a": Ann(True, 0.0), "b": Ann(False)}
        report = self._metrics(streams, anns)
        assert report.degenerate_grid
        assert report.auroc == pytest.approx(0.5)

    def test_three_vs_three_matches_exhaustive_enumeration(self):
        streams = {"c1": np.array([3.0, 1.0]), "c2": np.array([0.5]), "c3": np.array([2.0, 2.5]),
                   "k1": np.array([1.5]), "k2": np.array([0.7, 0.1]), "k3": np.array([2.2])}
        anns = {"c1": Ann(True, 0.0), "c2": Ann(True, 1.0), "c3": Ann(True, 0.0),
                "k1": Ann(False), "k2": Ann(False), "k3": Ann(False)}
        report = self._metrics(streams, anns)
        assert report.auroc == pytest.approx(brute_force_auroc(streams, anns))

    def test_sweep_equals_enumeration_on_500_random_small_cohorts(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            n_stays = int(rng.integers(2, 9))
            n_cases = int(rng.integers(1, n_stays))
            streams, anns = {}, {}
            for i in range(n_stays):
                sid = f"s{i}"
                n_hours = int(rng.integers(1, 6))
                streams[sid] = rng.integers(0, 21, n_hours).astype(float)
                is_case = i < n_cases
                anns[sid] = Ann(is_case, onset=float(rng.integers(0, n_hours)) if is_case else None)
            report = evaluate_cohort(streams, anns, EvalConfig())
            assert report.auroc == pytest.approx(brute_force_auroc(streams, anns), abs=1e-12)

    def test_auroc_invariant_under_strictly_increasing_transform(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n_stays = int(rng.integers(3, 9))
            n_cases = int(rng.integers(1, n_stays))
            streams, anns = {}, {}
            for i in range(n_stays):
                sid = f"s{i}"
                n_hours = int(rng.integers(1, 6))
                streams[sid] = rng.integers(0, 21, n_hours).astype(float)
                is_case = i < n_cases
                anns[sid] = Ann(is_case, onset=float(rng.integers(0, n_hours)) if is_case else None)
            base = evaluate_cohort(streams, anns, EvalConfig()).auroc
            affine = {sid: 3.0 * s + 7.0 for sid, s in streams.items()}
            assert evaluate_cohort(affine, anns, EvalConfig()).auroc == pytest.approx(base, abs=1e-12)
            curved = {sid: np.exp(s / 20.0) for sid, s in streams.items()}
            assert evaluate_cohort(curved, anns, EvalConfig()).auroc == pytest.approx(base, abs=1e-12)

    def test_no_cases_raises(self):
        with pytest.raises(ValueError):
            evaluate_cohort({"a": np.array([1.0, 2.0])}, {"a": Ann(False)}, EvalConfig())

    def test_recall_non_increasing_in_threshold(self):
        rng = np.random.default_rng(11)
        streams = {f"s{i}": rng.normal(size=8) for i in range(40)}
        anns = {f"s{i}": Ann(i % 4 == 0, onset=3.0 if i % 4 == 0 else None) for i in range(40)}
        report = evaluate_cohort(streams, anns, EvalConfig())
        recalls = [m.recall for m in report.thresholds]
        assert all(a >= b - 1e-12 for a, b in zip(recalls, recalls[1:]))


class TestAtFixedRecall:
    def _tm(self, threshold, recall, precision, earliness, n_cases=20, n_controls=80):
        tp = round(recall * n_cases)
        fn = n_cases - tp
        fp = round(tp / precision - tp) if precision and tp else 0
        tn = n_controls - fp
        return ThresholdMetrics(threshold, tp, fp, tn, fn, earliness)

    def test_linear_interpolation_of_precision(self):
        # 40 cases: threshold 1 has recall .85 / precision .40 / earliness 4.0h,
        # threshold 2 has recall .75 / precision .50 / earliness 3.0h
        lo = ThresholdMetrics(1.0, 34, 51, 49, 6, 4.0)
        hi = ThresholdMetrics(2.0, 30, 30, 70, 10, 3.0)
        assert lo.recall == pytest.approx(0.85) and lo.precision == pytest.approx(0.40)
        assert hi.recall == pytest.approx(0.75) and hi.precision == pytest.approx(0.50)
        precision, earliness, attained = at_fixed_recall([lo, hi], 0.80)
        assert attained
        assert precision == pytest.approx(0.45, abs=1e-12)
        assert earliness == pytest.approx(3.5, abs=1e-12)

    def test_exact_recall_hit_used_directly(self):
        exact = ThresholdMetrics(1.0, 80, 40, 60, 20, 2.5)  # recall .80 precision 2/3
        lower = ThresholdMetrics(2.0, 70, 10, 90, 30, 2.0)
        precision, earliness, attained = at_fixed_recall([exact, lower], 0.80)
        assert attained and precision == pytest.approx(80 / 120) and earliness == 2.5

    def test_unattained_recall_flagged(self):
        only = ThresholdMetrics(1.0, 50, 5, 95, 50, 1.0)  # recall .5 < .8
        precision, earliness, attained = at_fixed_recall([only], 0.80)
        assert not attained and precision is None and earliness is None


class TestHarmonize:
    def test_below_target_keeps_cases_subsamples_controls(self):
        cases = [f"c{i}" for i in range(20)]
        controls = [f"k{i}" for i in range(180)]
        subs, coverage, flagged = harmonize_prevalence(cases, controls, 0.17, reps=10, seed=0)
        assert not flagged and coverage == 1.0
        for cs, ks in subs:
            assert sorted(cs) == sorted(cases)
            assert len(ks) == 98  # round(20 * 0.83 / 0.17)
            achieved = len(cs) / (len(cs) + len(ks))
            assert abs(achieved - 0.17) < 1 / (len(cs) + len(ks))

    def test_above_target_keeps_controls_subsamples_cases(self):
        cases = [f"c{i}" for i in range(30)]
        controls = [f"k{i}" for i in range(70)]
        subs, coverage, flagged = harmonize_prevalence(cases, controls, 0.17, reps=10, seed=1)
        assert not flagged
        for cs, ks in subs:
            assert len(cs) == 14  # round(70 * 0.17 / 0.83)
            assert sorted(ks) == sorted(controls)

    def test_exact_prevalence_identity(self):
        cases = [f"c{i}" for i in range(17)]
        controls = [f"k{i}" for i in range(83)]
        subs, coverage, flagged = harmonize_prevalence(cases, controls, 0.17, reps=3, seed=2)
        for cs, ks in subs:
            assert sorted(cs) == sorted(cases) and sorted(ks) == sorted(controls)
        assert coverage == 1.0

    def test_deterministic_in_seed(self):
        cases = [f"c{i}" for i in range(30)]
        controls = [f"k{i}" for i in range(70)]
        a, _, _ = harmonize_prevalence(cases, controls, seed=42)
        b, _, _ = harmonize_prevalence(cases, controls, seed=42)
        assert a == b

    def test_coverage_with_heavy_case_subsampling(self):
        # 200 cases, 488 controls: each rep keeps round(488*.17/.83) = 100 cases
        cases = [f"c{i}" for i in range(200)]
        controls = [f"k{i}" for i in range(488)]
        subs, coverage, _ = harmonize_prevalence(cases, controls, 0.17, reps=10, seed=3)
        assert all(len(cs) == 100 for cs, _ in subs)
        assert coverage >= 0.983

    def test_no_cases_rejected(self):
        with pytest.raises(ValueError):
            harmonize_prevalence([], ["k1"], 0.17)


class TestSplits:
    def _ids(self, n_cases=170, n_controls=830):
        return ([f"c{i}" for i in range(n_cases)], [f"k{i}" for i in range(n_controls)])

    def test_stratified_sizes(self):
        cases, controls = self._ids()
        splits = split_dataset(cases, controls, seed=0)
        test = splits["test"]
        assert len(test) == 100
        assert sum(1 for sid in test if sid.startswith("c")) == 17
        rep = splits["repetitions"][0]
        assert len(rep["val"]) == 100
        assert len(rep["train"]) == 800
        assert not set(rep["train"]) & set(rep["val"])
        assert not set(rep["train"]) & set(test)

    def test_same_seed_identical(self):
        cases, controls = self._ids()
        assert split_dataset(cases, controls, seed=5) == split_dataset(cases, controls, seed=5)

    def test_test_identical_across_repetitions_train_val_differ(self):
        cases, controls = self._ids()
        splits = split_dataset(cases, controls, seed=1)
        reps = splits["repetitions"]
        assert len(reps) == 5
        assert sorted(reps[0]["train"] + reps[0]["val"]) == sorted(reps[1]["train"] + reps[1]["val"])
        assert set(reps[0]["val"]) != set(reps[1]["val"])

    def test_small_stratum_rejected(self):
        with pytest.raises(ValueError):
            split_dataset(["c1"], [f"k{i}" for i in range(100)], seed=0)
