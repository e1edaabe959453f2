"""Sepsis early-warning pipeline.

Hourly ICU time-series harmonization, Sepsis-3 label annotation, clinical
severity scores, feature extraction, an L1-regularised logistic-regression
early-warning model with a max-pooling ensemble, and the encounter-level
first-alarm evaluation protocol -- all verifiable on deterministically
generated synthetic cohorts.
"""

from .catalog import VariableCatalog, default_catalog, default_score_definitions
from .core import (HourlyStay, RawEvent, StayStatic, TreatmentLog, carry_forward,
                   convert_to_canonical, plausibility_filter, resample_hourly)
from .labels import (SepsisAnnotation, SiWindow, build_labels, detect_onset,
                     detect_si_fluid_abx, detect_si_multi_abx, jaccard_si)
from .scores import SofaHourly, ScoreSeries, partial_score_hourly, sofa_hourly
from .cohort import ExclusionReason, StudyFlowReport, filter_cohort, filter_stay
from .features import FeatureMatrix, FeatureSpec, Normalizer, apply_normalizer, extract, fit_normalizer
from .model import LinearModel, ScoreStream, max_pool, predict_stream, score_as_model, train_lasso_lr
from .evaluation import EvalConfig, EvalReport, evaluate_cohort, harmonize_prevalence, split_dataset
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "VariableCatalog", "default_catalog", "default_score_definitions",
    "RawEvent", "StayStatic", "TreatmentLog", "HourlyStay",
    "convert_to_canonical", "plausibility_filter", "resample_hourly", "carry_forward",
    "SiWindow", "SepsisAnnotation", "detect_si_fluid_abx", "detect_si_multi_abx",
    "detect_onset", "build_labels", "jaccard_si",
    "SofaHourly", "ScoreSeries", "sofa_hourly", "partial_score_hourly",
    "ExclusionReason", "StudyFlowReport", "filter_stay", "filter_cohort",
    "FeatureSpec", "FeatureMatrix", "Normalizer", "extract", "fit_normalizer", "apply_normalizer",
    "LinearModel", "ScoreStream", "train_lasso_lr", "predict_stream", "score_as_model", "max_pool",
    "EvalConfig", "EvalReport", "evaluate_cohort", "harmonize_prevalence", "split_dataset",
    "SynthConfig", "generate",
    "__version__",
]
