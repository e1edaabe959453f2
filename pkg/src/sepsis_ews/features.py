"""Per-hour feature matrices with a deterministic, versioned column layout.

Two sets:

* compact  -- 190 columns: 59 carried-forward values, 59 ever-observed
  indicators, 59 cumulative measurement counts, 9 derived features
  (shock index, PaO2/FiO2, SpO2/FiO2, BUN/creatinine, and the five
  treatment-free partial scores), 4 static columns.
* extended -- compact plus 5 statistics x 3 lookback windows (4/8/16h) per
  dynamic variable over the pre-carry hourly observations: 1075 columns.

Everything at hour t depends only on data at hours <= t. Absent entries are
NaN sentinels until ``apply_normalizer`` imputes (training-median) and
z-scores them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import VariableCatalog
from .core import HourlyStay, carry_forward
from .labels import SepsisAnnotation
from .scores import PARTIAL_SCORE_IDS

LOOKBACK_WINDOWS = (4, 8, 16)
LOOKBACK_STATS = ("mean", "median", "variance", "min", "max")
DERIVED_FEATURES = (
    "shock_index", "pf_ratio", "sf_ratio", "bun_crea_ratio",
    "sofa_partial", "sirs_partial", "mews_partial", "news_partial", "qsofa_partial",
)
STATIC_FEATURES = ("age", "sex_female", "height", "weight")

_PARTIAL_BY_FEATURE = dict(zip(DERIVED_FEATURES[4:], PARTIAL_SCORE_IDS))


@dataclass(frozen=True)
class FeatureSpec:
    """Feature-set identity and its frozen column order."""

    set_id: str
    variables: tuple[str, ...]
    columns: tuple[str, ...]
    include_static: bool = True
    lookback_windows: tuple[int, ...] = LOOKBACK_WINDOWS
    statistics: tuple[str, ...] = LOOKBACK_STATS

    @classmethod
    def build(cls, set_id: str, catalog: VariableCatalog, include_static: bool = True) -> "FeatureSpec":
        if set_id not in ("compact", "extended"):
            raise ValueError(f"unknown feature set {set_id!r}")
        variables = tuple(catalog.dynamic_names())
        cols = [f"val_{v}" for v in variables]
        cols += [f"ind_{v}" for v in variables]
        cols += [f"cnt_{v}" for v in variables]
        cols += list(DERIVED_FEATURES)
        if include_static:
            cols += list(STATIC_FEATURES)
        if set_id == "extended":
            for v in variables:
                for w in LOOKBACK_WINDOWS:
                    for stat in LOOKBACK_STATS:
                        cols.append(f"{v}_w{w}h_{stat}")
        return cls(set_id=set_id, variables=variables, columns=tuple(cols),
                   include_static=include_static)

    @property
    def n_columns(self) -> int:
        return len(self.columns)


@dataclass
class FeatureMatrix:
    """Per-hour feature vectors for one stay plus the training-eligibility mask."""

    stay_id: str
    columns: tuple[str, ...]
    matrix: np.ndarray  # (n_hours, n_columns), NaN = sentinel
    eligible: np.ndarray  # (n_hours,) bool, False past onset+24h

    def __post_init__(self):
        if self.matrix.shape[1] != len(self.columns):
            raise ValueError("feature matrix width does not match its column list")


@dataclass
class Normalizer:
    """Column-wise imputation values (training medians) and z-scoring moments."""

    columns: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    impute: np.ndarray
    constant_columns: list[str] = field(default_factory=list)
    never_observed_columns: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "impute": self.impute.tolist(),
            "constant_columns": self.constant_columns,
            "never_observed_columns": self.never_observed_columns,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Normalizer":
        return cls(
            columns=tuple(payload["columns"]),
            mean=np.asarray(payload["mean"], dtype=float),
            sd=np.asarray(payload["sd"], dtype=float),
            impute=np.asarray(payload["impute"], dtype=float),
            constant_columns=list(payload.get("constant_columns", [])),
            never_observed_columns=list(payload.get("never_observed_columns", [])),
        )


def _sliding_stats(values: np.ndarray, window: int) -> dict[str, np.ndarray]:
    """Trailing-window stats over pre-carry hourly observations.

    values: (n_vars, n_hours) with NaN where nothing was measured. Window at
    hour t covers hours (t-window, t]. Empty windows stay NaN; a single
    observation gives variance 0 (the sample variance is otherwise unbiased).
    """
    n_vars, n_hours = values.shape
    padded = np.concatenate([np.full((n_vars, window - 1), np.nan), values], axis=1)
    win = np.lib.stride_tricks.sliding_window_view(padded, window, axis=1)  # (n_vars, n_hours, window)
    n_obs = np.sum(~np.isnan(win), axis=2)
    with np.errstate(invalid="ignore"), np.testing.suppress_warnings() as sup:
        sup.filter(RuntimeWarning)
        out = {
            "mean": np.nanmean(win, axis=2),
            "median": np.nanmedian(win, axis=2),
            "variance": np.where(n_obs == 1, 0.0, np.nanvar(win, axis=2, ddof=1)),
            "min": np.nanmin(win, axis=2),
            "max": np.nanmax(win, axis=2),
        }
    empty = n_obs == 0
    for key in out:
        out[key] = np.where(empty, np.nan, out[key])
    return out


def extract(
    stay: HourlyStay,
    partial_scores: dict[str, np.ndarray],
    spec: FeatureSpec,
    annotation: SepsisAnnotation | None = None,
) -> FeatureMatrix:
    """Build the feature matrix for one stay.

    Accepts the stay pre- or post-carry-forward: carry-forward is idempotent
    and the pre-carry observation pattern is recovered from the counts. The
    eligibility mask honours the annotation's truncation point when given.
    """
    missing = [sid for sid in PARTIAL_SCORE_IDS if sid not in partial_scores]
    if missing:
        raise ValueError(f"partial scores missing for {missing}")
    cf = stay if stay.carried_forward else carry_forward(stay)
    n = stay.n_hours
    n_vars = len(spec.variables)

    cf_vals = np.full((n_vars, n), np.nan)
    raw_vals = np.full((n_vars, n), np.nan)
    cum_counts = np.zeros((n_vars, n))
    for i, v in enumerate(spec.variables):
        cf_vals[i] = cf.value_array(v)
        counts = cf.count_array(v)
        observed = counts > 0
        raw_vals[i, observed] = cf_vals[i, observed]
        cum_counts[i] = np.cumsum(counts)
    ever_observed = (cum_counts > 0).astype(float)

    def col(name: str) -> np.ndarray:
        return cf.value_array(name)

    with np.errstate(invalid="ignore", divide="ignore"):
        derived = {
            "shock_index": col("hr") / col("sbp"),
            "pf_ratio": col("po2") / (col("fio2") / 100.0),
            "sf_ratio": col("o2sat") / (col("fio2") / 100.0),
            "bun_crea_ratio": col("bun") / col("crea"),
        }
    for feat, sid in _PARTIAL_BY_FEATURE.items():
        series = np.asarray(partial_scores[sid], dtype=float)
        if series.shape[0] != n:
            raise ValueError(f"partial score {sid} has {series.shape[0]} hours, stay has {n}")
        derived[feat] = series
    for name, arr in derived.items():
        derived[name] = np.where(np.isfinite(arr), arr, np.nan)

    blocks = [cf_vals.T, ever_observed.T, cum_counts.T,
              np.column_stack([derived[name] for name in DERIVED_FEATURES])]

    if spec.include_static:
        st = stay.static
        static_row = np.array([
            st.age,
            1.0 if st.sex == "female" else 0.0,
            np.nan if st.height is None else st.height,
            np.nan if st.weight is None else st.weight,
        ])
        blocks.append(np.tile(static_row, (n, 1)))

    if spec.set_id == "extended":
        per_window = {w: _sliding_stats(raw_vals, w) for w in spec.lookback_windows}
        ext_cols = []
        for i in range(n_vars):
            for w in spec.lookback_windows:
                for stat in spec.statistics:
                    ext_cols.append(per_window[w][stat][i])
        blocks.append(np.column_stack(ext_cols))
    matrix = np.concatenate(blocks, axis=1)

    eligible = np.ones(n, dtype=bool)
    if annotation is not None:
        eligible = ~annotation.excluded_mask(n)
    return FeatureMatrix(stay_id=stay.stay_id, columns=spec.columns,
                         matrix=matrix, eligible=eligible)


def fit_normalizer(train: list[FeatureMatrix]) -> Normalizer:
    """Fit imputation medians and z-scoring moments on training-eligible hours only."""
    if not train:
        raise ValueError("empty training set")
    columns = train[0].columns
    for fm in train:
        if fm.columns != columns:
            raise ValueError("feature matrices disagree on columns")
    stacked = np.concatenate([fm.matrix[fm.eligible] for fm in train], axis=0)
    if stacked.shape[0] == 0:
        raise ValueError("no training-eligible hours")

    observed = ~np.isnan(stacked)
    impute = np.zeros(stacked.shape[1])
    never_observed = []
    with np.testing.suppress_warnings() as sup:
        sup.filter(RuntimeWarning)
        col_median = np.nanmedian(stacked, axis=0)
    for j in range(stacked.shape[1]):
        if observed[:, j].any():
            impute[j] = col_median[j]
        else:
            never_observed.append(columns[j])

    filled = np.where(observed, stacked, impute[None, :])
    mean = filled.mean(axis=0)
    sd = filled.std(axis=0)
    constant = sd == 0.0
    sd = np.where(constant, 1.0, sd)
    return Normalizer(
        columns=columns, mean=mean, sd=sd, impute=impute,
        constant_columns=[columns[j] for j in np.nonzero(constant)[0]],
        never_observed_columns=never_observed,
    )


def apply_normalizer(fm: FeatureMatrix, norm: Normalizer) -> FeatureMatrix:
    """Impute sentinels with the training medians, then z-score every column."""
    if fm.columns != norm.columns:
        raise ValueError("feature matrix columns do not match the normalizer")
    filled = np.where(np.isnan(fm.matrix), norm.impute[None, :], fm.matrix)
    z = (filled - norm.mean[None, :]) / norm.sd[None, :]
    if not np.isfinite(z).all():
        raise ValueError(f"stay {fm.stay_id}: non-finite features after normalization")
    return FeatureMatrix(stay_id=fm.stay_id, columns=fm.columns, matrix=z, eligible=fm.eligible)
