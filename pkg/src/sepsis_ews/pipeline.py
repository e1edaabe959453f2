"""End-to-end orchestration: the stage functions behind the CLI subcommands.

Each stage is a pure function of its inputs (given fixed seeds), so the CLI
can chain them in memory for run-all while still writing every artifact to
disk for the stage-by-stage workflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np
import pandas as pd

from .catalog import VariableCatalog, default_catalog, default_score_definitions
from .core import (HourlyStay, StayStatic, TreatmentLog, carry_forward,
                   convert_events_frame, filter_events_frame, resample_cohort)
from .evaluation import EvalConfig, evaluate_cohort, evaluate_harmonized, split_dataset
from .features import FeatureMatrix, FeatureSpec, apply_normalizer, extract, fit_normalizer
from .labels import SepsisAnnotation, annotate_stay
from .model import (DEFAULT_LAMBDA_GRID, LinearModel, ScoreStream, predict_stream,
                    train_lasso_lr)
from .scores import (SofaHourly, all_partial_scores, mews_hourly, news_hourly,
                     qsofa_hourly, sirs_hourly, sofa_hourly)


def ingest_cohort(
    events: pd.DataFrame,
    statics: dict[str, StayStatic],
    catalog: VariableCatalog | None = None,
    include_pre_icu: bool = False,
) -> tuple[dict[str, HourlyStay], dict]:
    """Canonical units -> plausibility filter -> hourly median resampling."""
    catalog = catalog or default_catalog()
    converted, rejected_units = convert_events_frame(events, catalog)
    kept, rejected_range = filter_events_frame(converted, catalog)
    stays, resample_report = resample_cohort(kept, statics, include_pre_icu=include_pre_icu)
    report = {
        "n_events_in": int(len(events)),
        "n_rejected_unknown": int(len(rejected_units)),
        "n_rejected_range": int(len(rejected_range)),
        "n_events_kept": int(len(kept)),
        **resample_report,
    }
    return stays, report


def score_cohort(
    stays: dict[str, HourlyStay],
    treatments: dict[str, TreatmentLog],
    definitions: dict | None = None,
) -> tuple[dict[str, HourlyStay], dict[str, SofaHourly], dict[str, list], dict[str, dict]]:
    """Carry forward once, then compute SOFA, the clinical baselines, and the
    treatment-free partial scores for every stay."""
    defs = definitions or default_score_definitions()
    cf_stays = {sid: carry_forward(stay) for sid, stay in stays.items()}
    sofas = {}
    baselines: dict[str, list] = {}
    partials: dict[str, dict] = {}
    for sid, cf in cf_stays.items():
        log = treatments.get(sid) or TreatmentLog.empty(sid)
        sofas[sid] = sofa_hourly(cf, log, defs)
        baselines[sid] = [
            sirs_hourly(cf, log, defs), qsofa_hourly(cf, log, defs),
            mews_hourly(cf, log, defs), news_hourly(cf, log, defs),
        ]
        partials[sid] = all_partial_scores(cf, defs)
    return cf_stays, sofas, baselines, partials


def annotate_cohort(
    stays: dict[str, HourlyStay],
    sofas: dict[str, SofaHourly],
    treatments: dict[str, TreatmentLog],
    si_definition: str = "fluid-abx",
    multi_abx_params: dict | None = None,
) -> dict[str, SepsisAnnotation]:
    return {
        sid: annotate_stay(stay, sofas[sid], treatments.get(sid) or TreatmentLog.empty(sid),
                           si_definition, multi_abx_params)
        for sid, stay in stays.items()
    }


def featurize_cohort(
    stays: dict[str, HourlyStay],
    partials: dict[str, dict],
    annotations: dict[str, SepsisAnnotation],
    spec: FeatureSpec,
    stay_ids=None,
) -> dict[str, FeatureMatrix]:
    ids = stay_ids if stay_ids is not None else list(stays)
    return {sid: extract(stays[sid], partials[sid], spec, annotations.get(sid)) for sid in ids}


def stack_training_data(
    features: dict[str, FeatureMatrix],
    annotations: dict[str, SepsisAnnotation],
    stay_ids: list[str],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack per-stay matrices into (X, y, eligible) over the given stays."""
    ids = sorted(stay_ids)
    X = np.concatenate([features[sid].matrix for sid in ids], axis=0)
    y = np.concatenate([
        annotations[sid].labels if annotations[sid].labels is not None
        else np.zeros(features[sid].matrix.shape[0], dtype=int)
        for sid in ids
    ]).astype(float)
    eligible = np.concatenate([features[sid].eligible for sid in ids])
    return X, y, eligible


def auroc_standard_error(auroc: float, n_cases: int, n_controls: int) -> float:
    """Hanley-McNeil standard error of an AUROC estimate."""
    a = min(max(auroc, 1e-9), 1.0 - 1e-9)
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    var = (a * (1 - a) + (n_cases - 1) * (q1 - a * a) + (n_controls - 1) * (q2 - a * a))
    return sqrt(max(var, 0.0) / (n_cases * n_controls))


@dataclass
class TrainingResult:
    chosen_lambda: float
    models: list[LinearModel]
    lambda_path: list[dict] = field(default_factory=list)
    splits: dict = field(default_factory=dict)


def _predict_streams(model, features, stay_ids) -> dict[str, ScoreStream]:
    return {sid: predict_stream(model, features[sid]) for sid in stay_ids}


def train_with_selection(
    features: dict[str, FeatureMatrix],
    annotations: dict[str, SepsisAnnotation],
    splits: dict,
    lambda_grid=DEFAULT_LAMBDA_GRID,
    feature_spec_id: str = "compact",
    eval_config: EvalConfig | None = None,
    seed: int = 0,
    path_max_iterations: int = 300,
) -> TrainingResult:
    """Select the penalty on the first repetition's validation split, then
    refit one model per repetition at the chosen penalty.

    Selection uses validation encounter AUROC with the one-standard-error
    rule: among penalties within one Hanley-McNeil SE of the best, the
    largest (sparsest) wins. Path fits are warm-started down the grid and
    iteration-capped (only their validation AUROC is consumed); the final
    repetition models run to full convergence, warm-started from the path
    solution at the chosen penalty.
    """
    cfg = eval_config or EvalConfig()
    rep0 = splits["repetitions"][0]
    norm0 = fit_normalizer([features[sid] for sid in sorted(rep0["train"])])
    X0 = {sid: apply_normalizer(features[sid], norm0) for sid in sorted(rep0["train"])}
    Xtr, ytr, mtr = stack_training_data(X0, annotations, rep0["train"])

    path = []
    solutions = {}
    warm = None
    for lam in sorted(lambda_grid, reverse=True):
        model = train_lasso_lr(
            Xtr, ytr, mtr, lam=float(lam), normalizer=norm0,
            feature_spec_id=feature_spec_id, warm_start=warm,
            max_iterations=path_max_iterations,
            metadata={"stage": "lambda-path", "seed": seed},
        )
        warm = (model.weights, model.intercept)
        solutions[float(lam)] = warm
        val_streams = {sid: s.scores for sid, s in
                       _predict_streams(model, features, rep0["val"]).items()}
        report = evaluate_cohort(val_streams, annotations, cfg)
        path.append({
            "lambda": float(lam), "val_auroc": report.auroc,
            "n_nonzero": int(np.count_nonzero(model.weights)),
            "n_cases": report.n_cases, "n_controls": report.n_controls,
        })
    best = max(path, key=lambda r: r["val_auroc"])
    se = auroc_standard_error(best["val_auroc"], best["n_cases"], best["n_controls"])
    eligible_lams = [r["lambda"] for r in path if r["val_auroc"] >= best["val_auroc"] - se]
    chosen = max(eligible_lams)

    models = []
    for r, rep in enumerate(splits["repetitions"]):
        norm = fit_normalizer([features[sid] for sid in sorted(rep["train"])])
        Xn = {sid: apply_normalizer(features[sid], norm) for sid in sorted(rep["train"])}
        X, y, m = stack_training_data(Xn, annotations, rep["train"])
        models.append(train_lasso_lr(
            X, y, m, lam=chosen, normalizer=norm, feature_spec_id=feature_spec_id,
            warm_start=solutions[chosen],
            metadata={"split_id": r, "seed": seed},
        ))
    return TrainingResult(chosen_lambda=chosen, models=models, lambda_path=path, splits=splits)


def evaluate_models(
    models: list[LinearModel],
    features: dict[str, FeatureMatrix],
    annotations: dict[str, SepsisAnnotation],
    test_ids: list[str],
    eval_config: EvalConfig | None = None,
) -> dict:
    """Held-out evaluation with prevalence harmonization, averaged over
    repetition models and subsamples."""
    cfg = eval_config or EvalConfig()
    per_rep = []
    aurocs, precisions, earlinesses = [], [], []
    coverage = None
    for r, model in enumerate(models):
        streams = {sid: s.scores for sid, s in _predict_streams(model, features, test_ids).items()}
        reports, coverage = evaluate_harmonized(streams, annotations, cfg)
        rep_entry = {
            "repetition": r,
            "auroc": [rep.auroc for rep in reports],
            "precision_at_recall": [rep.precision_at_target_recall for rep in reports],
            "earliness_at_recall": [rep.earliness_at_target_recall for rep in reports],
        }
        per_rep.append(rep_entry)
        aurocs.extend(rep_entry["auroc"])
        precisions.extend(p for p in rep_entry["precision_at_recall"] if p is not None)
        earlinesses.extend(e for e in rep_entry["earliness_at_recall"] if e is not None)
    out = {
        "n_test_stays": len(test_ids),
        "n_models": len(models),
        "auroc_mean": float(np.mean(aurocs)),
        "auroc_std": float(np.std(aurocs)),
        "precision_at_recall_mean": float(np.mean(precisions)) if precisions else None,
        "earliness_at_recall_mean": float(np.mean(earlinesses)) if earlinesses else None,
        "subsampling_coverage": coverage,
        "target_recall": cfg.target_recall,
        "target_prevalence": cfg.target_prevalence,
        "repetitions": per_rep,
    }
    return out


def split_from_annotations(
    stay_ids: list[str],
    annotations: dict[str, SepsisAnnotation],
    seed: int = 0,
    n_repetitions: int = 5,
) -> dict:
    cases = [sid for sid in stay_ids if annotations[sid].is_case]
    controls = [sid for sid in stay_ids if not annotations[sid].is_case]
    return split_dataset(cases, controls, seed=seed, n_repetitions=n_repetitions)
