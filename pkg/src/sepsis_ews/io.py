"""File formats for every pipeline artifact plus atomic writing.

All artifacts are plain CSV/JSON. Writers stage to a temp file in the target
directory and rename into place, so a crashed subcommand never leaves a
partial artifact behind. Readers validate the schema up front and report the
offending row/column on failure.
"""

from __future__ import annotations

import json
import os
import tempfile
from math import ceil

import numpy as np
import pandas as pd

from .core import HourlyStay, Interval, StayStatic, TreatmentLog, VasoEpisode
from .labels import SepsisAnnotation, SiWindow, build_labels


class SchemaError(ValueError):
    """Input artifact violates its documented schema."""


EVENT_COLUMNS = ["stay_id", "variable", "time_hours", "value", "unit"]
STATIC_COLUMNS = ["stay_id", "age", "sex", "height", "weight", "icu_los_hours", "site_id"]
TREATMENT_COLUMNS = ["stay_id", "kind", "agent", "start_hours", "end_hours", "rate"]
TREATMENT_KINDS = {"abx", "fluid_sampling", "vasopressor", "ventilation", "sedation"}


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_csv(df: pd.DataFrame, path) -> None:
    atomic_write_text(path, df.to_csv(index=False))


def atomic_write_json(payload, path) -> None:
    atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


def _require_columns(df: pd.DataFrame, columns: list[str], what: str) -> None:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(f"{what}: missing columns {missing}")


def _numeric(df: pd.DataFrame, column: str, what: str, allow_nan: bool = False) -> pd.Series:
    coerced = pd.to_numeric(df[column], errors="coerce")
    bad = coerced.isna() & df[column].notna()
    if not allow_nan:
        bad |= df[column].isna()
    if bad.any():
        row = int(np.nonzero(bad.to_numpy())[0][0])
        raise SchemaError(f"{what}: non-numeric value in column {column!r} at row {row + 2}")
    return coerced


def read_events(path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str, "variable": str, "unit": str})
    _require_columns(df, EVENT_COLUMNS, "events file")
    df["time_hours"] = _numeric(df, "time_hours", "events file")
    df["value"] = _numeric(df, "value", "events file")
    if not np.isfinite(df["time_hours"]).all() or not np.isfinite(df["value"]).all():
        bad = ~(np.isfinite(df["time_hours"]) & np.isfinite(df["value"]))
        row = int(np.nonzero(bad.to_numpy())[0][0])
        raise SchemaError(f"events file: non-finite entry at row {row + 2}")
    return df[EVENT_COLUMNS]


def read_static(path) -> dict[str, StayStatic]:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str, "sex": str, "site_id": str})
    _require_columns(df, STATIC_COLUMNS, "static file")
    df["age"] = _numeric(df, "age", "static file")
    df["icu_los_hours"] = _numeric(df, "icu_los_hours", "static file")
    df["height"] = _numeric(df, "height", "static file", allow_nan=True)
    df["weight"] = _numeric(df, "weight", "static file", allow_nan=True)
    out = {}
    for i, row in enumerate(df.itertuples(index=False)):
        if row.stay_id in out:
            raise SchemaError(f"static file: duplicate stay_id {row.stay_id!r} at row {i + 2}")
        sex = row.sex if row.sex in ("female", "male") else "other"
        try:
            out[row.stay_id] = StayStatic(
                stay_id=row.stay_id, age=float(row.age), sex=sex,
                height=None if pd.isna(row.height) else float(row.height),
                weight=None if pd.isna(row.weight) else float(row.weight),
                icu_los_hours=float(row.icu_los_hours),
                site_id=row.site_id if isinstance(row.site_id, str) and row.site_id else "site0",
            )
        except ValueError as exc:
            raise SchemaError(f"static file: row {i + 2}: {exc}") from exc
    return out


def read_treatments(path, stay_ids=None) -> dict[str, TreatmentLog]:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str, "kind": str, "agent": str})
    _require_columns(df, TREATMENT_COLUMNS, "treatments file")
    df["start_hours"] = _numeric(df, "start_hours", "treatments file")
    df["end_hours"] = _numeric(df, "end_hours", "treatments file", allow_nan=True)
    df["rate"] = _numeric(df, "rate", "treatments file", allow_nan=True)
    logs: dict[str, TreatmentLog] = {}
    for sid in stay_ids or []:
        logs[sid] = TreatmentLog.empty(sid)
    for i, row in enumerate(df.itertuples(index=False)):
        log = logs.setdefault(row.stay_id, TreatmentLog.empty(row.stay_id))
        kind = row.kind
        if kind not in TREATMENT_KINDS:
            raise SchemaError(f"treatments file: unknown kind {kind!r} at row {i + 2}")
        try:
            if kind == "abx":
                log.antibiotics.append(float(row.start_hours))
            elif kind == "fluid_sampling":
                log.fluid_samplings.append(float(row.start_hours))
            elif kind == "vasopressor":
                log.vasopressors.append(VasoEpisode(
                    agent=row.agent, start=float(row.start_hours),
                    end=float(row.end_hours), rate=float(row.rate)))
            elif kind == "ventilation":
                log.ventilation.append(Interval(float(row.start_hours), float(row.end_hours)))
            else:
                log.sedation.append(Interval(float(row.start_hours), float(row.end_hours)))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"treatments file: row {i + 2} ({kind}): {exc}") from exc
    return logs


def write_hourly(stays: dict[str, HourlyStay], path) -> None:
    """Long-format pre-carry grid: only hours with measurements are stored."""
    sid_col, hour_col, var_col, val_col, cnt_col = [], [], [], [], []
    for sid in stays:
        stay = stays[sid]
        for var, counts in stay.counts.items():
            idx = np.nonzero(counts)[0]
            if idx.size == 0:
                continue
            sid_col.append(np.repeat(sid, idx.size))
            hour_col.append(idx)
            var_col.append(np.repeat(var, idx.size))
            val_col.append(stay.values[var][idx])
            cnt_col.append(counts[idx])
    if sid_col:
        df = pd.DataFrame({
            "stay_id": np.concatenate(sid_col), "hour": np.concatenate(hour_col),
            "variable": np.concatenate(var_col), "value": np.concatenate(val_col),
            "count": np.concatenate(cnt_col),
        })
    else:
        df = pd.DataFrame(columns=["stay_id", "hour", "variable", "value", "count"])
    atomic_write_csv(df, path)


def read_hourly(path, statics: dict[str, StayStatic]) -> dict[str, HourlyStay]:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str, "variable": str})
    _require_columns(df, ["stay_id", "hour", "variable", "value", "count"], "hourly file")
    stays = {}
    for sid, st in statics.items():
        stays[sid] = HourlyStay(stay_id=sid, static=st, n_hours=int(ceil(st.icu_los_hours)),
                                values={}, counts={})
    unknown = set(df["stay_id"].unique()) - set(stays)
    if unknown:
        raise SchemaError(f"hourly file: stays missing from static file: {sorted(unknown)[:5]}")
    for (sid, var), grp in df.groupby(["stay_id", "variable"], sort=False):
        stay = stays[sid]
        v = np.full(stay.n_hours, np.nan)
        c = np.zeros(stay.n_hours, dtype=int)
        hours = grp["hour"].to_numpy(dtype=int)
        if (hours < 0).any() or (hours >= stay.n_hours).any():
            raise SchemaError(f"hourly file: hour out of range for stay {sid}")
        v[hours] = grp["value"].to_numpy(dtype=float)
        c[hours] = grp["count"].to_numpy(dtype=int)
        stay.values[var] = v
        stay.counts[var] = c
    return stays


def write_annotations(annotations: dict[str, SepsisAnnotation], path) -> None:
    rows = []
    for sid, ann in annotations.items():
        si = ann.si_windows[0] if ann.si_windows else None
        if ann.onset is not None:
            for w in ann.si_windows:
                if w.covers(ann.onset):
                    si = w
                    break
        rows.append({
            "stay_id": sid,
            "onset_hour": ann.onset,
            "si_time": si.si_time if si else None,
            "si_definition": si.definition if si else None,
        })
    atomic_write_csv(pd.DataFrame(rows, columns=["stay_id", "onset_hour", "si_time", "si_definition"]), path)


def read_annotations(path, stays: dict[str, HourlyStay]) -> dict[str, SepsisAnnotation]:
    """Rebuild annotations (incl. label vectors) from the annotation CSV."""
    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str, "si_definition": str})
    _require_columns(df, ["stay_id", "onset_hour", "si_time", "si_definition"], "annotations file")
    df["onset_hour"] = _numeric(df, "onset_hour", "annotations file", allow_nan=True)
    df["si_time"] = _numeric(df, "si_time", "annotations file", allow_nan=True)
    out = {}
    for i, row in enumerate(df.itertuples(index=False)):
        if row.stay_id not in stays:
            raise SchemaError(f"annotations file: unknown stay {row.stay_id!r} at row {i + 2}")
        windows = []
        if not pd.isna(row.si_time):
            definition = row.si_definition if isinstance(row.si_definition, str) else "fluid-abx"
            windows = [SiWindow(float(row.si_time), definition)]
        onset = None if pd.isna(row.onset_hour) else float(row.onset_hour)
        stay = stays[row.stay_id]
        if onset is not None and not (0 <= onset < stay.n_hours):
            # out-of-grid onsets stay representable so the cohort filter can
            # reject them; labels are all-zero in that case
            ann = SepsisAnnotation(row.stay_id, windows, onset,
                                   np.zeros(stay.n_hours, dtype=int), onset + 24.0)
        else:
            ann = build_labels(stay, onset, windows)
        out[row.stay_id] = ann
    for sid, stay in stays.items():
        if sid not in out:
            out[sid] = build_labels(stay, None, [])
    return out


def write_labels(annotations: dict[str, SepsisAnnotation], stays: dict[str, HourlyStay], path) -> None:
    parts = []
    for sid, ann in annotations.items():
        n = stays[sid].n_hours
        labels = ann.labels if ann.labels is not None else np.zeros(n, dtype=int)
        parts.append(pd.DataFrame({
            "stay_id": sid, "hour": np.arange(n),
            "label": labels.astype(int),
            "excluded": ann.excluded_mask(n).astype(int),
        }))
    atomic_write_csv(pd.concat(parts, ignore_index=True), path)


def write_sofa(sofas: dict, path) -> None:
    parts = []
    for sid, sofa in sofas.items():
        n = sofa.total.shape[0]
        parts.append(pd.DataFrame({
            "stay_id": sid, "hour": np.arange(n), "total": sofa.total,
            **{k: v for k, v in sofa.components.items()},
        }))
    atomic_write_csv(pd.concat(parts, ignore_index=True), path)


def read_sofa(path) -> dict:
    from .scores import SOFA_COMPONENTS, SofaHourly

    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str})
    _require_columns(df, ["stay_id", "hour", "total", *SOFA_COMPONENTS], "sofa file")
    out = {}
    for sid, grp in df.groupby("stay_id", sort=False):
        grp = grp.sort_values("hour")
        out[sid] = SofaHourly(
            stay_id=sid,
            total=grp["total"].to_numpy(dtype=int),
            components={c: grp[c].to_numpy(dtype=int) for c in SOFA_COMPONENTS},
        )
    return out


def write_scores(series_by_stay: dict[str, list], path) -> None:
    """Long format stay_id,hour,score_id,value over every computed score."""
    parts = []
    for sid, series_list in series_by_stay.items():
        for s in series_list:
            parts.append(pd.DataFrame({
                "stay_id": sid, "hour": np.arange(s.values.shape[0]),
                "score_id": s.score_id, "value": s.values,
            }))
    atomic_write_csv(pd.concat(parts, ignore_index=True), path)


def read_scores(path) -> dict[str, dict[str, np.ndarray]]:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str, "score_id": str})
    _require_columns(df, ["stay_id", "hour", "score_id", "value"], "scores file")
    out: dict[str, dict[str, np.ndarray]] = {}
    for (sid, score_id), grp in df.groupby(["stay_id", "score_id"], sort=False):
        arr = np.zeros(int(grp["hour"].max()) + 1)
        arr[grp["hour"].to_numpy(dtype=int)] = grp["value"].to_numpy(dtype=float)
        out.setdefault(sid, {})[score_id] = arr
    return out


def write_features(matrices: dict, path) -> None:
    parts = []
    for sid, fm in matrices.items():
        n = fm.matrix.shape[0]
        df = pd.DataFrame(fm.matrix, columns=list(fm.columns))
        df.insert(0, "eligible", fm.eligible.astype(int))
        df.insert(0, "hour", np.arange(n))
        df.insert(0, "stay_id", sid)
        parts.append(df)
    atomic_write_csv(pd.concat(parts, ignore_index=True), path)


def read_features(path):
    from .features import FeatureMatrix

    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str})
    _require_columns(df, ["stay_id", "hour", "eligible"], "features file")
    cols = tuple(c for c in df.columns if c not in ("stay_id", "hour", "eligible"))
    out = {}
    for sid, grp in df.groupby("stay_id", sort=False):
        grp = grp.sort_values("hour")
        out[sid] = FeatureMatrix(
            stay_id=sid, columns=cols,
            matrix=grp[list(cols)].to_numpy(dtype=float),
            eligible=grp["eligible"].to_numpy(dtype=int).astype(bool),
        )
    return out


def write_streams(streams: dict, path) -> None:
    parts = []
    for sid, stream in streams.items():
        parts.append(pd.DataFrame({
            "stay_id": sid, "hour": np.arange(stream.scores.shape[0]), "score": stream.scores,
        }))
    atomic_write_csv(pd.concat(parts, ignore_index=True), path)


def read_streams(path):
    from .model import ScoreStream

    df = pd.read_csv(path, float_precision="round_trip", dtype={"stay_id": str})
    _require_columns(df, ["stay_id", "hour", "score"], "streams file")
    out = {}
    for sid, grp in df.groupby("stay_id", sort=False):
        grp = grp.sort_values("hour")
        out[sid] = ScoreStream(sid, grp["score"].to_numpy(dtype=float))
    return out
