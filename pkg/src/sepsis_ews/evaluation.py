"""Encounter-level first-alarm evaluation.

All per-hour scores of the evaluation cohort are pooled, the top and bottom
0.5 percentiles trimmed away, and the remaining range partitioned into 100
evenly spaced thresholds. Per threshold, each stay raises an alarm the first
(and only the first) time its score reaches the threshold; alarms fill an
encounter-level confusion matrix, ROC points come from sweeping thresholds,
and precision/earliness at the target recall are linearly interpolated
between the two bracketing thresholds.

Case streams are only evaluated up to onset+24h, mirroring the label
truncation; alarms after onset still count as true positives, with negative
earliness. Percentiles use the inverse-ECDF (nearest-rank) convention, which
leaves small score sets untrimmed.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import floor

import numpy as np

from .labels import LABEL_AFTER_ONSET_H


@dataclass(frozen=True)
class EvalConfig:
    trim_fraction: float = 0.005
    n_thresholds: int = 100
    target_recall: float = 0.80
    target_prevalence: float = 0.17
    n_subsamplings: int = 10
    seed: int = 0
    alarm_tie: str = "ge"  # alarm on score >= threshold; "gt" for strict crossing

    def __post_init__(self):
        if not 0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must be in [0, 0.5)")
        if self.n_thresholds < 2:
            raise ValueError("need at least 2 thresholds")
        if not 0 < self.target_recall < 1:
            raise ValueError("target_recall must be in (0, 1)")
        if self.alarm_tie not in ("ge", "gt"):
            raise ValueError("alarm_tie must be 'ge' or 'gt'")


@dataclass
class EncounterOutcome:
    stay_id: str
    is_case: bool
    alarm_time: float | None
    onset: float | None

    @property
    def earliness(self) -> float | None:
        if self.is_case and self.alarm_time is not None and self.onset is not None:
            return self.onset - self.alarm_time
        return None


@dataclass
class ThresholdMetrics:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    median_earliness: float | None

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else float("nan")

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else float("nan")

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if (self.fp + self.tn) else float("nan")


@dataclass
class EvalReport:
    thresholds: list[ThresholdMetrics]
    roc_points: list[tuple[float, float]]
    auroc: float
    precision_at_target_recall: float | None
    earliness_at_target_recall: float | None
    recall_attained: bool
    degenerate_grid: bool = False
    n_cases: int = 0
    n_controls: int = 0
    subsampling_coverage: float | None = None

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "precision_at_target_recall": self.precision_at_target_recall,
            "earliness_at_target_recall": self.earliness_at_target_recall,
            "recall_attained": self.recall_attained,
            "degenerate_grid": self.degenerate_grid,
            "n_cases": self.n_cases,
            "n_controls": self.n_controls,
            "thresholds": [
                {"threshold": t.threshold, "tp": t.tp, "fp": t.fp, "tn": t.tn, "fn": t.fn,
                 "median_earliness": t.median_earliness}
                for t in self.thresholds
            ],
            "roc_points": self.roc_points,
        }


def nearest_rank_percentile(values: np.ndarray, fraction: float) -> float:
    """Inverse-ECDF percentile: the ceil(n*p)-th order statistic."""
    s = np.sort(np.asarray(values, dtype=float))
    n = s.shape[0]
    if n == 0:
        raise ValueError("no scores")
    rank = int(np.ceil(fraction * n))
    return float(s[min(max(rank, 1), n) - 1])


def threshold_grid(all_scores: np.ndarray, cfg: EvalConfig) -> tuple[np.ndarray, bool]:
    """Evenly spaced thresholds over the trimmed pooled score range.

    Returns (grid, degenerate): a constant score set collapses to a single
    flagged threshold.
    """
    scores = np.asarray(all_scores, dtype=float)
    if scores.size < 2 or np.unique(scores).size < 2:
        if scores.size == 0:
            raise ValueError("no scores to build a grid from")
        return np.array([float(scores[0])]), True
    lo = nearest_rank_percentile(scores, cfg.trim_fraction)
    hi = nearest_rank_percentile(scores, 1.0 - cfg.trim_fraction)
    if lo == hi:
        return np.array([lo]), True
    return np.linspace(lo, hi, cfg.n_thresholds), False


def truncate_case_stream(scores: np.ndarray, onset: float) -> np.ndarray:
    """Hours past onset+24h are not considered for case evaluation."""
    last = floor(onset + LABEL_AFTER_ONSET_H)
    return scores[: min(scores.shape[0], last + 1)]


def encounter_sweep(
    streams: dict[str, np.ndarray],
    annotations: dict,
    threshold: float,
    alarm_tie: str = "ge",
    pretruncated: bool = False,
) -> tuple[list[EncounterOutcome], ThresholdMetrics]:
    """Alarm each stay at its first threshold crossing and fill the confusion matrix.

    annotations maps stay_id to an object with is_case / onset attributes.
    Streams of cases are truncated at onset+24h here unless pretruncated.
    """
    outcomes = []
    tp = fp = tn = fn = 0
    earliness = []
    for sid, scores in streams.items():
        ann = annotations[sid]
        is_case = ann.is_case
        s = scores
        if is_case and not pretruncated:
            s = truncate_case_stream(scores, ann.onset)
        hit = s >= threshold if alarm_tie == "ge" else s > threshold
        idx = np.nonzero(hit)[0]
        alarm = float(idx[0]) if idx.size else None
        outcomes.append(EncounterOutcome(sid, is_case, alarm, ann.onset if is_case else None))
        if is_case and alarm is not None:
            tp += 1
            earliness.append(ann.onset - alarm)
        elif is_case:
            fn += 1
        elif alarm is not None:
            fp += 1
        else:
            tn += 1
    med = float(np.median(earliness)) if earliness else None
    return outcomes, ThresholdMetrics(threshold, tp, fp, tn, fn, med)


def roc_auroc(per_threshold: list[ThresholdMetrics]) -> tuple[list[tuple[float, float]], float]:
    """ROC points (with (0,0) and (1,1) anchors) and the trapezoidal AUROC."""
    if not per_threshold:
        raise ValueError("no threshold metrics")
    if per_threshold[0].tp + per_threshold[0].fn == 0 or per_threshold[0].fp + per_threshold[0].tn == 0:
        raise ValueError("need at least one case and one control")
    pts = [(m.fpr, m.recall) for m in per_threshold]
    pts += [(0.0, 0.0), (1.0, 1.0)]
    pts.sort()
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    auroc = float(np.trapezoid(ys, xs))
    return pts, auroc


def _interpolate_at_recall(
    per_threshold: list[ThresholdMetrics], target: float
) -> tuple[float | None, float | None, bool]:
    """Precision and median earliness at the target recall.

    Thresholds ascend, so recall is non-increasing; the bracket is the pair
    around the last threshold still reaching the target. Exact hits are used
    directly; interpolated earliness falls back to the defined side when one
    bracket end raised no true alarms.
    """
    recalls = [m.recall for m in per_threshold]
    at_or_above = [i for i, r in enumerate(recalls) if r >= target]
    if not at_or_above:
        return None, None, False
    i = at_or_above[-1]
    m_hi = per_threshold[i]
    if m_hi.recall == target:
        return m_hi.precision, m_hi.median_earliness, True
    if i == len(per_threshold) - 1:
        # even the highest threshold over-shoots the target recall
        return None, None, False
    m_lo = per_threshold[i + 1]  # next threshold: recall < target by construction
    span = m_hi.recall - m_lo.recall
    frac = 0.0 if span == 0 else (target - m_lo.recall) / span
    precision = m_lo.precision + frac * (m_hi.precision - m_lo.precision)
    if m_lo.median_earliness is None and m_hi.median_earliness is None:
        earliness = None
    elif m_lo.median_earliness is None:
        earliness = m_hi.median_earliness
    elif m_hi.median_earliness is None:
        earliness = m_lo.median_earliness
    else:
        earliness = m_lo.median_earliness + frac * (m_hi.median_earliness - m_lo.median_earliness)
    return precision, earliness, True


def at_fixed_recall(
    per_threshold: list[ThresholdMetrics], target_recall: float = 0.80
) -> tuple[float | None, float | None, bool]:
    return _interpolate_at_recall(per_threshold, target_recall)


def evaluate_cohort(
    streams: dict[str, np.ndarray],
    annotations: dict,
    cfg: EvalConfig | None = None,
) -> EvalReport:
    """Full sweep on one evaluation cohort: grid, confusion matrices, ROC, targets."""
    cfg = cfg or EvalConfig()
    truncated = {}
    for sid, scores in streams.items():
        ann = annotations[sid]
        truncated[sid] = truncate_case_stream(scores, ann.onset) if ann.is_case else scores
    pooled = np.concatenate([s for s in truncated.values() if s.size])
    grid, degenerate = threshold_grid(pooled, cfg)
    per_threshold = [
        encounter_sweep(truncated, annotations, float(th), cfg.alarm_tie, pretruncated=True)[1]
        for th in grid
    ]
    roc_points, auroc = roc_auroc(per_threshold)
    precision, earliness, attained = at_fixed_recall(per_threshold, cfg.target_recall)
    n_cases = per_threshold[0].tp + per_threshold[0].fn
    n_controls = per_threshold[0].fp + per_threshold[0].tn
    return EvalReport(
        thresholds=per_threshold, roc_points=roc_points, auroc=auroc,
        precision_at_target_recall=precision, earliness_at_target_recall=earliness,
        recall_attained=attained, degenerate_grid=degenerate,
        n_cases=n_cases, n_controls=n_controls,
    )


def harmonize_prevalence(
    case_ids: list[str],
    control_ids: list[str],
    target: float = 0.17,
    reps: int = 10,
    seed: int = 0,
) -> tuple[list[tuple[list[str], list[str]]], float, bool]:
    """Subsample to the target case prevalence, repeated for case coverage.

    Below-target cohorts keep every case and subsample controls; above-target
    cohorts keep every control and subsample cases. Returns the subsamples,
    the fraction of distinct cases appearing in at least one repetition, and
    a flag set when the target was unreachable (cohort then used as-is).
    """
    n_cases, n_controls = len(case_ids), len(control_ids)
    if n_cases == 0 or n_controls == 0:
        raise ValueError("need at least one case and one control")
    prevalence = n_cases / (n_cases + n_controls)
    subsamples = []
    seen = set()
    flagged = False
    rng_root = np.random.SeedSequence(seed)
    for rep_seq in rng_root.spawn(reps):
        rng = np.random.default_rng(rep_seq)
        if prevalence == target:
            cases, controls = list(case_ids), list(control_ids)
        elif prevalence < target:
            want = round(n_cases * (1 - target) / target)
            if want > n_controls:
                flagged = True
                want = n_controls
            controls = [control_ids[i] for i in rng.choice(n_controls, size=want, replace=False)]
            cases = list(case_ids)
        else:
            want = round(n_controls * target / (1 - target))
            if want > n_cases:
                flagged = True
                want = n_cases
            elif want == 0:
                flagged = True
                want = 1
            cases = [case_ids[i] for i in rng.choice(n_cases, size=want, replace=False)]
            controls = list(control_ids)
        seen.update(cases)
        subsamples.append((cases, controls))
    coverage = len(seen) / n_cases
    return subsamples, coverage, flagged


def evaluate_harmonized(
    streams: dict[str, np.ndarray],
    annotations: dict,
    cfg: EvalConfig | None = None,
) -> tuple[list[EvalReport], float]:
    """Evaluate over prevalence-harmonized subsamples; metrics average downstream."""
    cfg = cfg or EvalConfig()
    case_ids = sorted(sid for sid in streams if annotations[sid].is_case)
    control_ids = sorted(sid for sid in streams if not annotations[sid].is_case)
    subsamples, coverage, _ = harmonize_prevalence(
        case_ids, control_ids, cfg.target_prevalence, cfg.n_subsamplings, cfg.seed
    )
    reports = []
    for cases, controls in subsamples:
        subset = {sid: streams[sid] for sid in cases + controls}
        rep = evaluate_cohort(subset, annotations, cfg)
        rep.subsampling_coverage = coverage
        reports.append(rep)
    return reports, coverage


def split_dataset(
    case_ids: list[str],
    control_ids: list[str],
    seed: int = 0,
    test_fraction: float = 0.10,
    val_fraction: float = 0.10,
    n_repetitions: int = 5,
) -> dict:
    """Stratified test split plus per-repetition train/validation resampling.

    The test set is identical across repetitions; each repetition re-divides
    the remaining development set. Fully determined by the seed.
    """
    out: dict = {"test": [], "repetitions": []}
    strata = {"case": sorted(case_ids), "control": sorted(control_ids)}
    dev: dict[str, list[str]] = {}
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    for name, ids in strata.items():
        if not ids:
            raise ValueError(f"stratum {name!r} is empty")
        n_test = round(test_fraction * len(ids))
        if n_test == 0 or n_test == len(ids):
            raise ValueError(f"stratum {name!r} too small to stratify")
        perm = rng.permutation(len(ids))
        out["test"].extend(ids[i] for i in perm[:n_test])
        dev[name] = [ids[i] for i in perm[n_test:]]
    for rep in range(n_repetitions):
        rep_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(rep + 1)[-1])
        train: list[str] = []
        val: list[str] = []
        for name, ids in strata.items():
            pool = dev[name]
            n_val = round(val_fraction * len(ids))
            if n_val == 0 or n_val >= len(pool):
                raise ValueError(f"stratum {name!r} too small for a validation split")
            perm = rep_rng.permutation(len(pool))
            val.extend(pool[i] for i in perm[:n_val])
            train.extend(pool[i] for i in perm[n_val:])
        out["repetitions"].append({"train": train, "val": val})
    return out
