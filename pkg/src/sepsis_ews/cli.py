"""Command-line interface: the pipeline as composable subcommands over files.

    synth     generate a synthetic cohort (events/static/treatments CSVs)
    ingest    harmonize raw events onto the hourly grid
    score     SOFA + clinical baseline scores + partial scores
    label     suspected infection, onset detection, hourly labels
    filter    exclusion cascade and study-flow report
    featurize per-hour feature matrices
    train     penalty selection + per-repetition model fits
    predict   score streams for a stored model
    pool      max-pooling ensemble over score stream files
    evaluate  encounter-level first-alarm evaluation
    report    render an evaluation report (optionally with plots)
    run-all   chain synth -> ... -> evaluate from one config file

Exit codes: 0 ok, 2 schema error, 3 infeasible config, 4 numerical failure.
All randomness flows from explicit seeds; re-running a subcommand on the
same inputs reproduces its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np
import pandas as pd

from . import io as sio
from . import pipeline as pl
from .catalog import VariableCatalog, default_catalog, default_score_definitions
from .cohort import filter_cohort
from .evaluation import EvalConfig, evaluate_cohort, evaluate_harmonized
from .features import FeatureSpec
from .io import SchemaError
from .model import (DEFAULT_LAMBDA_GRID, LinearModel, pool_cohort, predict_stream,
                    score_as_model)
from .scores import ScoreSeries
from .synth import InfeasibleConfig, SynthConfig, generate


class NumericalFailure(RuntimeError):
    pass


KNOWN_CONFIG_KEYS = {
    "out_dir", "seed", "synth", "include_pre_icu", "si_definition", "feature_set",
    "lambda_grid", "n_repetitions", "eval", "min_site_prevalence", "write_features",
    "normalize_pool", "threshold_tie", "catalog", "score_definitions",
    "events", "static", "treatments",
}
KNOWN_SYNTH_KEYS = {
    "n_stays", "case_fraction", "seed", "los_range", "signal_strength", "site_count",
    "site_prevalence_offsets", "site_feature_shift", "multi_abx_fraction",
    "n_exclusion_sets", "measurement_rates",
}
KNOWN_EVAL_KEYS = {
    "trim_fraction", "n_thresholds", "target_recall", "target_prevalence",
    "n_subsamplings", "seed", "alarm_tie",
}


def _out_dir(args) -> str:
    out = os.environ.get("SEPSIS_EWS_OUTDIR") or args.out
    os.makedirs(out, exist_ok=True)
    return out


def _load_catalog(args) -> VariableCatalog:
    if getattr(args, "catalog", None):
        return VariableCatalog.from_file(args.catalog)
    return default_catalog()


def _load_definitions(args) -> dict:
    if getattr(args, "score_definitions", None):
        with open(args.score_definitions) as fh:
            return json.load(fh)
    return default_score_definitions()


def _check_keys(payload: dict, known: set, what: str) -> None:
    unknown = set(payload) - known
    if unknown:
        raise SchemaError(f"{what}: unknown keys {sorted(unknown)}")


def _synth_config(payload: dict, seed_default: int = 0) -> SynthConfig:
    _check_keys(payload, KNOWN_SYNTH_KEYS, "synth config")
    payload = dict(payload)
    if "los_range" in payload:
        payload["los_range"] = tuple(payload["los_range"])
    if "site_prevalence_offsets" in payload:
        payload["site_prevalence_offsets"] = tuple(payload["site_prevalence_offsets"])
    payload.setdefault("seed", seed_default)
    return SynthConfig(**payload)


def _eval_config(payload: dict, seed_default: int = 0, tie: str = "ge") -> EvalConfig:
    _check_keys(payload, KNOWN_EVAL_KEYS, "eval config")
    payload = dict(payload)
    payload.setdefault("seed", seed_default)
    payload.setdefault("alarm_tie", tie)
    return EvalConfig(**payload)


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> None:
    out = _out_dir(args)
    cfg = SynthConfig(
        n_stays=args.n_stays, case_fraction=args.case_fraction, seed=args.seed,
        los_range=(args.los_min, args.los_max), signal_strength=args.signal_strength,
        site_count=args.site_count, site_feature_shift=args.site_feature_shift,
        multi_abx_fraction=args.multi_abx_fraction, n_exclusion_sets=args.exclusion_sets,
    )
    cohort = generate(cfg)
    sio.atomic_write_csv(cohort.events, os.path.join(out, "events.csv"))
    sio.atomic_write_csv(cohort.static, os.path.join(out, "static.csv"))
    sio.atomic_write_csv(cohort.treatments, os.path.join(out, "treatments.csv"))
    sio.atomic_write_csv(cohort.ground_truth_frame(), os.path.join(out, "ground_truth.csv"))
    print(f"wrote {cfg.n_stays} stays to {out}")


def cmd_ingest(args) -> None:
    out = _out_dir(args)
    catalog = _load_catalog(args)
    events = sio.read_events(args.events)
    statics = sio.read_static(args.static)
    stays, report = pl.ingest_cohort(events, statics, catalog, include_pre_icu=args.include_pre_icu)
    sio.write_hourly(stays, os.path.join(out, "hourly.csv"))
    sio.atomic_write_json(report, os.path.join(out, "ingest_report.json"))
    print(f"ingested {report['n_events_kept']}/{report['n_events_in']} events "
          f"({report['n_rejected_unknown']} unknown, {report['n_rejected_range']} out of range)")


def cmd_score(args) -> None:
    out = _out_dir(args)
    defs = _load_definitions(args)
    statics = sio.read_static(args.static)
    stays = sio.read_hourly(args.hourly, statics)
    treatments = sio.read_treatments(args.treatments, stay_ids=list(stays))
    _, sofas, baselines, partials = pl.score_cohort(stays, treatments, defs)
    sio.write_sofa(sofas, os.path.join(out, "sofa.csv"))
    all_series = {
        sid: baselines[sid]
        + [ScoreSeries(sid, "sofa", sofas[sid].total)]
        + [ScoreSeries(sid, k, v) for k, v in partials[sid].items()]
        for sid in stays
    }
    sio.write_scores(all_series, os.path.join(out, "scores.csv"))
    print(f"scored {len(stays)} stays")


def cmd_label(args) -> None:
    out = _out_dir(args)
    statics = sio.read_static(args.static)
    stays = sio.read_hourly(args.hourly, statics)
    sofas = sio.read_sofa(args.sofa)
    treatments = sio.read_treatments(args.treatments, stay_ids=list(stays))
    multi = {"min_administrations": args.min_administrations, "max_span": args.max_span}
    annotations = pl.annotate_cohort(stays, sofas, treatments, args.si_definition, multi)
    sio.write_annotations(annotations, os.path.join(out, "annotations.csv"))
    sio.write_labels(annotations, stays, os.path.join(out, "labels.csv"))
    n_cases = sum(a.is_case for a in annotations.values())
    print(f"annotated {len(annotations)} stays, {n_cases} cases")


def cmd_filter(args) -> None:
    out = _out_dir(args)
    statics = sio.read_static(args.static)
    stays = sio.read_hourly(args.hourly, statics)
    annotations = sio.read_annotations(args.annotations, stays)
    retained, verdicts, report = filter_cohort(stays, annotations, args.min_site_prevalence)
    sio.atomic_write_csv(pd.DataFrame({"stay_id": sorted(retained)}), os.path.join(out, "cohort.csv"))
    sio.atomic_write_json(report.to_dict(), os.path.join(out, "study_flow.json"))
    print(report.format_table())


def cmd_featurize(args) -> None:
    out = _out_dir(args)
    statics = sio.read_static(args.static)
    stays = sio.read_hourly(args.hourly, statics)
    annotations = sio.read_annotations(args.annotations, stays)
    scores = sio.read_scores(args.scores)
    catalog = _load_catalog(args)
    spec = FeatureSpec.build(args.feature_set, catalog)
    if args.cohort:
        keep = set(pd.read_csv(args.cohort, dtype={"stay_id": str})["stay_id"])
        stays = {sid: s for sid, s in stays.items() if sid in keep}
    partials = {sid: scores.get(sid, {}) for sid in stays}
    matrices = pl.featurize_cohort(stays, partials, annotations, spec)
    sio.write_features(matrices, os.path.join(out, "features.csv"))
    print(f"featurized {len(matrices)} stays x {spec.n_columns} columns ({spec.set_id})")


def cmd_train(args) -> None:
    out = _out_dir(args)
    statics = sio.read_static(args.static)
    stays = sio.read_hourly(args.hourly, statics)
    features = sio.read_features(args.features)
    annotations = sio.read_annotations(args.annotations, stays)
    grid = [float(x) for x in args.lambda_grid.split(",")] if args.lambda_grid else DEFAULT_LAMBDA_GRID
    try:
        splits = pl.split_from_annotations(sorted(features), annotations,
                                           seed=args.seed, n_repetitions=args.n_repetitions)
        result = pl.train_with_selection(
            features, annotations, splits, lambda_grid=grid,
            feature_spec_id=args.feature_set, seed=args.seed,
        )
    except ValueError as exc:
        raise NumericalFailure(str(exc)) from exc
    sio.atomic_write_json(splits, os.path.join(out, "splits.json"))
    for r, model in enumerate(result.models):
        sio.atomic_write_text(os.path.join(out, f"model_rep{r}.json"), model.to_json())
    sio.atomic_write_json(
        {"chosen_lambda": result.chosen_lambda, "lambda_path": result.lambda_path},
        os.path.join(out, "training_report.json"))
    print(f"chose lambda={result.chosen_lambda:g}; wrote {len(result.models)} repetition models")


def cmd_predict(args) -> None:
    out = _out_dir(args)
    if args.scores:
        if not args.score_id:
            raise SchemaError("predict --scores requires --score-id")
        per_stay = sio.read_scores(args.scores)
        streams = {}
        for sid, by_score in per_stay.items():
            if args.score_id not in by_score:
                raise SchemaError(f"score {args.score_id!r} missing for stay {sid}")
            streams[sid] = score_as_model(ScoreSeries(sid, args.score_id, by_score[args.score_id]))
    else:
        if not (args.features and args.model):
            raise SchemaError("predict needs either --features + --model or --scores + --score-id")
        features = sio.read_features(args.features)
        with open(args.model) as fh:
            model = LinearModel.from_json(fh.read())
        streams = {sid: predict_stream(model, features[sid]) for sid in features}
    if args.stays:
        keep = set(json.load(open(args.stays))["test"]) if args.stays.endswith(".json") \
            else set(pd.read_csv(args.stays, dtype={"stay_id": str})["stay_id"])
        streams = {sid: s for sid, s in streams.items() if sid in keep}
    sio.write_streams(streams, os.path.join(out, args.name))
    print(f"predicted {len(streams)} stays -> {args.name}")


def cmd_pool(args) -> None:
    out = _out_dir(args)
    per_model = [sio.read_streams(path) for path in args.streams]
    pooled = pool_cohort(per_model, normalize_per_model=args.normalize_per_model)
    sio.write_streams(pooled, os.path.join(out, args.name))
    print(f"pooled {len(per_model)} stream files over {len(pooled)} stays")


def cmd_evaluate(args) -> None:
    out = _out_dir(args)
    statics = sio.read_static(args.static)
    stays = sio.read_hourly(args.hourly, statics)
    annotations = sio.read_annotations(args.annotations, stays)
    streams = {sid: s.scores for sid, s in sio.read_streams(args.streams).items()}
    cfg = EvalConfig(trim_fraction=args.trim_fraction, n_thresholds=args.n_thresholds,
                     target_recall=args.target_recall, target_prevalence=args.target_prevalence,
                     n_subsamplings=args.n_subsamplings, seed=args.seed, alarm_tie=args.threshold_tie)
    if args.no_harmonize:
        report = evaluate_cohort(streams, annotations, cfg)
        payload = {"harmonized": False, **report.to_dict()}
        rep_for_csv = report
    else:
        reports, coverage = evaluate_harmonized(streams, annotations, cfg)
        payload = {
            "harmonized": True,
            "auroc_mean": float(np.mean([r.auroc for r in reports])),
            "auroc_std": float(np.std([r.auroc for r in reports])),
            "precision_at_recall_mean": _mean_or_none(
                [r.precision_at_target_recall for r in reports]),
            "earliness_at_recall_mean": _mean_or_none(
                [r.earliness_at_target_recall for r in reports]),
            "subsampling_coverage": coverage,
            "subsamples": [r.to_dict() | {"thresholds": None, "roc_points": None} for r in reports],
        }
        rep_for_csv = reports[0]
    sio.atomic_write_json(payload, os.path.join(out, "eval_report.json"))
    sio.atomic_write_csv(
        pd.DataFrame(rep_for_csv.roc_points, columns=["fpr", "tpr"]),
        os.path.join(out, "roc_points.csv"))
    sio.atomic_write_csv(
        pd.DataFrame([{
            "threshold": t.threshold, "tp": t.tp, "fp": t.fp, "tn": t.tn, "fn": t.fn,
            "recall": t.recall, "precision": t.precision,
            "median_earliness": t.median_earliness,
        } for t in rep_for_csv.thresholds]),
        os.path.join(out, "threshold_metrics.csv"))
    key = "auroc_mean" if not args.no_harmonize else "auroc"
    print(f"AUROC: {payload[key]:.4f}")


def _mean_or_none(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def cmd_report(args) -> None:
    with open(args.eval) as fh:
        payload = json.load(fh)
    lines = ["encounter-level evaluation"]
    for key in ("auroc", "auroc_mean", "auroc_std", "precision_at_recall_mean",
                "earliness_at_recall_mean", "precision_at_target_recall",
                "earliness_at_target_recall", "subsampling_coverage"):
        if payload.get(key) is not None:
            lines.append(f"  {key:<28} {payload[key]:.4f}")
    print("\n".join(lines))
    if args.plots:
        _write_plots(payload, args.plots)


def _write_plots(payload: dict, plot_dir: str) -> None:
    try:
        import matplotlib
        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise InfeasibleConfig("plot emission requires matplotlib (pip install sepsis-ews[plots])") from exc
    os.makedirs(plot_dir, exist_ok=True)
    roc = payload.get("roc_points")
    if roc:
        fig, ax = plt.subplots(figsize=(4, 4))
        xs, ys = zip(*roc)
        ax.plot(xs, ys, marker=".", lw=1)
        ax.plot([0, 1], [0, 1], ls="--", c="grey", lw=0.8)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title(f"encounter ROC (AUROC {payload.get('auroc', float('nan')):.3f})")
        fig.savefig(os.path.join(plot_dir, "roc.svg"), bbox_inches="tight")
        plt.close(fig)
    thresholds = payload.get("thresholds")
    if thresholds:
        pts = [(t["median_earliness"], t["tp"] / (t["tp"] + t["fp"]))
               for t in thresholds if t["median_earliness"] is not None and t["tp"] + t["fp"] > 0]
        if pts:
            fig, ax = plt.subplots(figsize=(4, 4))
            ax.scatter([p[0] for p in pts], [p[1] for p in pts], s=8)
            ax.set_xlabel("median earliness (h before onset)")
            ax.set_ylabel("precision")
            fig.savefig(os.path.join(plot_dir, "precision_earliness.svg"), bbox_inches="tight")
            plt.close(fig)


def cmd_run_all(args) -> None:
    with open(args.config) as fh:
        cfg = json.load(fh)
    _check_keys(cfg, KNOWN_CONFIG_KEYS, "run-all config")
    summary = run_all(cfg, verbose=True)
    print(json.dumps({k: v for k, v in summary.items() if not isinstance(v, (list, dict))}, indent=1))


def run_all(cfg: dict, verbose: bool = False) -> dict:
    """Execute synth -> ingest -> score -> label -> filter -> featurize ->
    train -> predict -> evaluate from one config dict; returns the summary."""
    t0 = time.time()
    out = os.environ.get("SEPSIS_EWS_OUTDIR") or cfg.get("out_dir") or "run"
    os.makedirs(out, exist_ok=True)
    seed = int(cfg.get("seed", 0))

    def log(msg):
        if verbose:
            print(f"[run-all +{time.time() - t0:6.1f}s] {msg}", flush=True)

    catalog = (VariableCatalog.from_file(cfg["catalog"]) if cfg.get("catalog")
               else default_catalog())
    defs = default_score_definitions()
    if cfg.get("score_definitions"):
        with open(cfg["score_definitions"]) as fh:
            defs = json.load(fh)

    if "synth" in cfg:
        synth_cfg = _synth_config(cfg.get("synth", {}), seed_default=seed)
        cohort = generate(synth_cfg)
        sio.atomic_write_csv(cohort.events, os.path.join(out, "events.csv"))
        sio.atomic_write_csv(cohort.static, os.path.join(out, "static.csv"))
        sio.atomic_write_csv(cohort.treatments, os.path.join(out, "treatments.csv"))
        sio.atomic_write_csv(cohort.ground_truth_frame(), os.path.join(out, "ground_truth.csv"))
        events, statics = cohort.events, sio.read_static(os.path.join(out, "static.csv"))
        treatments = sio.read_treatments(os.path.join(out, "treatments.csv"), stay_ids=list(statics))
        log(f"synthesized {synth_cfg.n_stays} stays")
    else:
        events = sio.read_events(cfg["events"])
        statics = sio.read_static(cfg["static"])
        treatments = sio.read_treatments(cfg["treatments"], stay_ids=list(statics))
        log(f"loaded {len(statics)} stays")

    stays, ingest_report = pl.ingest_cohort(events, statics, catalog,
                                            include_pre_icu=bool(cfg.get("include_pre_icu", False)))
    sio.write_hourly(stays, os.path.join(out, "hourly.csv"))
    sio.atomic_write_json(ingest_report, os.path.join(out, "ingest_report.json"))
    log(f"ingested {ingest_report['n_events_kept']} events")

    cf_stays, sofas, baselines, partials = pl.score_cohort(stays, treatments, defs)
    sio.write_sofa(sofas, os.path.join(out, "sofa.csv"))
    log("scored")

    annotations = pl.annotate_cohort(stays, sofas, treatments,
                                     cfg.get("si_definition", "fluid-abx"))
    sio.write_annotations(annotations, os.path.join(out, "annotations.csv"))
    sio.write_labels(annotations, stays, os.path.join(out, "labels.csv"))
    log(f"annotated ({sum(a.is_case for a in annotations.values())} cases)")

    retained, verdicts, flow = filter_cohort(stays, annotations,
                                             float(cfg.get("min_site_prevalence", 0.15)))
    sio.atomic_write_csv(pd.DataFrame({"stay_id": sorted(retained)}), os.path.join(out, "cohort.csv"))
    sio.atomic_write_json(flow.to_dict(), os.path.join(out, "study_flow.json"))
    log(f"filtered: retained {len(retained)}/{flow.input_count}")

    spec = FeatureSpec.build(cfg.get("feature_set", "compact"), catalog)
    matrices = pl.featurize_cohort(cf_stays, partials, annotations, spec, stay_ids=retained)
    if cfg.get("write_features", False):
        sio.write_features(matrices, os.path.join(out, "features.csv"))
    log(f"featurized {len(matrices)} stays x {spec.n_columns}")

    eval_cfg = _eval_config(cfg.get("eval", {}), seed_default=seed,
                            tie=cfg.get("threshold_tie", "ge"))
    grid = cfg.get("lambda_grid") or list(DEFAULT_LAMBDA_GRID)
    try:
        splits = pl.split_from_annotations(retained, annotations, seed=seed,
                                           n_repetitions=int(cfg.get("n_repetitions", 5)))
        sio.atomic_write_json(splits, os.path.join(out, "splits.json"))
        result = pl.train_with_selection(matrices, annotations, splits, lambda_grid=grid,
                                         feature_spec_id=spec.set_id, eval_config=eval_cfg,
                                         seed=seed)
    except ValueError as exc:
        raise NumericalFailure(str(exc)) from exc
    for r, model in enumerate(result.models):
        sio.atomic_write_text(os.path.join(out, f"model_rep{r}.json"), model.to_json())
    sio.atomic_write_json({"chosen_lambda": result.chosen_lambda, "lambda_path": result.lambda_path},
                          os.path.join(out, "training_report.json"))
    log(f"trained {len(result.models)} models (lambda={result.chosen_lambda:g})")

    for r, model in enumerate(result.models):
        streams = {sid: predict_stream(model, matrices[sid]) for sid in splits["test"]}
        sio.write_streams(streams, os.path.join(out, f"streams_test_rep{r}.csv"))

    summary = pl.evaluate_models(result.models, matrices, annotations, splits["test"], eval_cfg)
    summary["chosen_lambda"] = result.chosen_lambda
    summary["study_flow"] = flow.to_dict()
    summary["runtime_seconds"] = time.time() - t0
    sio.atomic_write_json(summary, os.path.join(out, "eval_report.json"))
    log(f"evaluated: AUROC {summary['auroc_mean']:.4f}")
    return summary


# ------------------------------------------------------------------- parsing

def _add_out(p, default="out"):
    p.add_argument("--out", default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sepsis-ews", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    _add_out(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-stays", type=int, default=200)
    p.add_argument("--case-fraction", type=float, default=0.25)
    p.add_argument("--signal-strength", type=float, default=0.0)
    p.add_argument("--los-min", type=float, default=24.0)
    p.add_argument("--los-max", type=float, default=72.0)
    p.add_argument("--site-count", type=int, default=1)
    p.add_argument("--site-feature-shift", type=float, default=0.0)
    p.add_argument("--multi-abx-fraction", type=float, default=0.7)
    p.add_argument("--exclusion-sets", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ingest", help="harmonize events onto the hourly grid")
    _add_out(p)
    p.add_argument("--events", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--catalog")
    p.add_argument("--include-pre-icu", action="store_true")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("score", help="compute SOFA and clinical baseline scores")
    _add_out(p)
    p.add_argument("--hourly", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--treatments", required=True)
    p.add_argument("--score-definitions")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("label", help="detect suspected infection and sepsis onset")
    _add_out(p)
    p.add_argument("--hourly", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--sofa", required=True)
    p.add_argument("--treatments", required=True)
    p.add_argument("--si-definition", choices=["fluid-abx", "multi-abx"], default="fluid-abx")
    p.add_argument("--min-administrations", type=int, default=2)
    p.add_argument("--max-span", type=float, default=24.0)
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("filter", help="apply the exclusion cascade")
    _add_out(p)
    p.add_argument("--hourly", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--min-site-prevalence", type=float, default=0.15)
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("featurize", help="build per-hour feature matrices")
    _add_out(p)
    p.add_argument("--hourly", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--cohort", help="cohort.csv restricting the stays")
    p.add_argument("--catalog")
    p.add_argument("--feature-set", choices=["compact", "extended"], default="compact")
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("train", help="select the penalty and fit repetition models")
    _add_out(p)
    p.add_argument("--features", required=True)
    p.add_argument("--hourly", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--feature-set", default="compact")
    p.add_argument("--lambda-grid", help="comma-separated penalties (default: 13-point log grid)")
    p.add_argument("--n-repetitions", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="emit score streams from a model or a clinical score")
    _add_out(p)
    p.add_argument("--features", help="features.csv (with --model)")
    p.add_argument("--model", help="stored model JSON (with --features)")
    p.add_argument("--scores", help="scores.csv to use a clinical score as the model")
    p.add_argument("--score-id", help="which score from --scores, e.g. sofa or news")
    p.add_argument("--stays", help="splits.json or a cohort CSV restricting the stays")
    p.add_argument("--name", default="streams.csv")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("pool", help="max-pool score streams from several models")
    _add_out(p)
    p.add_argument("--streams", nargs="+", required=True)
    p.add_argument("--normalize-per-model", action="store_true")
    p.add_argument("--name", default="pooled_streams.csv")
    p.set_defaults(fn=cmd_pool)

    p = sub.add_parser("evaluate", help="encounter-level first-alarm evaluation")
    _add_out(p)
    p.add_argument("--streams", required=True)
    p.add_argument("--hourly", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--trim-fraction", type=float, default=0.005)
    p.add_argument("--n-thresholds", type=int, default=100)
    p.add_argument("--target-recall", type=float, default=0.80)
    p.add_argument("--target-prevalence", type=float, default=0.17)
    p.add_argument("--n-subsamplings", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold-tie", choices=["ge", "gt"], default="ge")
    p.add_argument("--no-harmonize", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="render an evaluation report")
    p.add_argument("--eval", required=True)
    p.add_argument("--plots", help="directory for SVG plots (requires matplotlib)")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("run-all", help="full pipeline from one config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_run_all)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
        return 0
    except SchemaError as exc:
        print(json.dumps({"error": "schema", "detail": str(exc)}), file=sys.stderr)
        return 2
    except InfeasibleConfig as exc:
        print(json.dumps({"error": "infeasible-config", "detail": str(exc)}), file=sys.stderr)
        return 3
    except (NumericalFailure, FloatingPointError) as exc:
        print(json.dumps({"error": "numerical", "detail": str(exc)}), file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(json.dumps({"error": "schema", "detail": f"missing input: {exc}"}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
