"""End-to-end audit workflow: ingest or generate a cohort, train the ensemble
per outer fold under each configured mitigation, evaluate fairness per
(attribute, task, mitigation) cell, and assemble the canonical report."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .adversarial import AdvConfig, AdversarialEnsemble, adv_tune, default_adv_grid
from .cohort import (
    ATTRIBUTES,
    CN,
    LABELS,
    Cohort,
    CsvSchema,
    SensitiveSpec,
    SyntheticConfig,
    binarize,
    generate_synthetic,
    load_csv,
    stratified_kfold,
    stratified_split,
)
from .ensemble import (
    TASKS,
    HyperParams,
    PartitionedOvoEnsemble,
    balanced_accuracy,
    binary_from_scores,
    binary_truth,
    child_seed,
    default_grid,
    select_hyperparams,
    weighted_f1,
)
from .fairness import MetricSummary, _summarize, aggregate_folds, counterfactual_consistency, parity_report
from .learners import KernelSpec
from .proxy import attribute_proxy_scan
from .reject_option import roc_apply, roc_bounds_cv, roc_fit
from .report import render_outputs, write_report_json
from .residualize import CovariateResidualizer, covariate_matrix

logger = logging.getLogger(__name__)

MITIGATIONS = ("none", "pre", "pre+proxy", "in", "post")


class ConfigError(ValueError):
    """The audit configuration is malformed."""


def _take(mapping: dict, allowed: set[str], context: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")


@dataclass(frozen=True)
class AuditConfig:
    """Validated audit configuration; `raw` keeps the exact input mapping for
    provenance hashing."""

    seed: int
    attributes: tuple[str, ...]
    mitigations: tuple[str, ...]
    synthetic: SyntheticConfig | None
    csv_path: str | None
    csv_schema: CsvSchema | None
    outer_folds: int
    inner_folds: int
    grid: tuple[HyperParams, ...]
    adversarial_grid: tuple[AdvConfig, ...]
    adversarial_cv_folds: int
    counterfactual: bool
    counterfactual_mode: str
    proxy_scan: bool
    age_threshold: float
    output_dir: str | None
    raw: dict

    @classmethod
    def from_dict(cls, data: dict) -> "AuditConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _take(data, {"seed", "attributes", "mitigations", "data", "cv", "grid",
                     "adversarial_grid", "adversarial_cv_folds", "counterfactual",
                     "counterfactual_mode", "proxy_scan", "age_threshold", "output_dir"},
              "config")
        if "seed" not in data or not isinstance(data["seed"], int):
            raise ConfigError("config requires an integer 'seed'")
        attributes = tuple(data.get("attributes", ()))
        if not attributes or not set(attributes) <= set(ATTRIBUTES):
            raise ConfigError(f"'attributes' must be a non-empty subset of {ATTRIBUTES}")
        mitigations = tuple(data.get("mitigations", ()))
        if not mitigations or not set(mitigations) <= set(MITIGATIONS):
            raise ConfigError(f"'mitigations' must be a non-empty subset of {MITIGATIONS}")

        if "data" not in data or not isinstance(data["data"], dict):
            raise ConfigError("config requires a 'data' object")
        _take(data["data"], {"synthetic", "csv"}, "data")
        synthetic = None
        csv_path = None
        csv_schema = None
        if ("synthetic" in data["data"]) == ("csv" in data["data"]):
            raise ConfigError("data must hold exactly one of 'synthetic' or 'csv'")
        if "synthetic" in data["data"]:
            synthetic = parse_synthetic(data["data"]["synthetic"], default_seed=data["seed"])
        else:
            csv = data["data"]["csv"]
            _take(csv, {"path", "schema"}, "data.csv")
            if "path" not in csv:
                raise ConfigError("data.csv requires 'path'")
            csv_path = str(csv["path"])
            schema = csv.get("schema", {})
            _take(schema, {"id", "gender", "race", "age", "label", "total_brain_volume",
                           "feature_columns", "filter_race"}, "data.csv.schema")
            if "feature_columns" in schema and schema["feature_columns"] is not None:
                schema = dict(schema, feature_columns=tuple(schema["feature_columns"]))
            csv_schema = CsvSchema(**schema)

        cv = data.get("cv", {})
        _take(cv, {"outer_folds", "inner_folds"}, "cv")
        outer_folds = int(cv.get("outer_folds", 5))
        inner_folds = int(cv.get("inner_folds", 4))
        if outer_folds < 2 or inner_folds < 2:
            raise ConfigError("cv folds must be >= 2")

        grid = tuple(parse_hyperparams(g, i) for i, g in enumerate(data.get("grid", []))) or tuple(default_grid())
        adv_grid = tuple(parse_adv_config(g, i) for i, g in enumerate(data.get("adversarial_grid", []))) \
            or tuple(default_adv_grid())
        cf_mode = data.get("counterfactual_mode", "retrain")
        if cf_mode not in ("retrain", "flip"):
            raise ConfigError("counterfactual_mode must be 'retrain' or 'flip'")
        return cls(
            seed=data["seed"],
            attributes=attributes,
            mitigations=mitigations,
            synthetic=synthetic,
            csv_path=csv_path,
            csv_schema=csv_schema,
            outer_folds=outer_folds,
            inner_folds=inner_folds,
            grid=grid,
            adversarial_grid=adv_grid,
            adversarial_cv_folds=int(data.get("adversarial_cv_folds", 5)),
            counterfactual=bool(data.get("counterfactual", True)),
            counterfactual_mode=cf_mode,
            proxy_scan=bool(data.get("proxy_scan", True)),
            age_threshold=float(data.get("age_threshold", 69.0)),
            output_dir=data.get("output_dir"),
            raw=data,
        )


def parse_synthetic(data: dict, default_seed: int = 0) -> SyntheticConfig:
    _take(data, {"n_per_class", "n_features", "class_separation", "prevalence_skew",
                 "subgroup_shift", "subgroup_label_noise", "proxy_strength", "seed"},
          "data.synthetic")
    kwargs = dict(data)
    if "n_per_class" in kwargs:
        kwargs["n_per_class"] = tuple(int(n) for n in kwargs["n_per_class"])
    kwargs.setdefault("seed", child_seed(default_seed, "synthetic") % 2**31)
    try:
        return SyntheticConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic config: {exc}") from exc


def parse_hyperparams(data: dict, index: int) -> HyperParams:
    _take(data, {"C", "kernel", "gamma"}, f"grid[{index}]")
    try:
        return HyperParams(C=float(data.get("C", 1.0)),
                           kernel=KernelSpec(data.get("kernel", "linear"), data.get("gamma")))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid[{index}]: {exc}") from exc


def parse_adv_config(data: dict, index: int) -> AdvConfig:
    _take(data, {"epochs", "batch_size", "hidden_units", "adversary_weight", "learning_rate"},
          f"adversarial_grid[{index}]")
    try:
        return AdvConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid adversarial_grid[{index}]: {exc}") from exc


def load_config(path) -> AuditConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return AuditConfig.from_dict(data)


def config_hash(config: AuditConfig) -> str:
    return hashlib.sha256(json.dumps(config.raw, sort_keys=True).encode()).hexdigest()


def load_cohort(config: AuditConfig) -> Cohort:
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic)
    return load_csv(config.csv_path, config.csv_schema or CsvSchema())


# ---------------------------------------------------------------------------
# per-fold work units (top level so joblib can ship them to workers)

def _residualized_features(features, labels, covariates, train_idx):
    cn_train = train_idx[labels[train_idx] == CN]
    model = CovariateResidualizer().fit(features[cn_train], covariates[cn_train])
    return model.transform(features, covariates)


def _base_fold(features, labels, groups, covariates, train_idx, test_idx, grid,
               inner_k, tol, seed):
    """Train one outer fold of the calibrated SVM ensemble; covariates not None
    means the features are residualized on them first (fit on training CN)."""
    X = features if covariates is None else _residualized_features(
        features, labels, covariates, train_idx)
    hp = select_hyperparams(X[train_idx], labels[train_idx], groups[train_idx], list(grid),
                            inner_k=inner_k, seed=child_seed(seed, "select"), tol=tol)
    ensemble = PartitionedOvoEnsemble(
        C=hp.C, kernel=hp.kernel, tol=tol, calibration="cv", seed=child_seed(seed, "fit"),
    ).fit(X[train_idx], labels[train_idx], groups[train_idx])
    return {"scores": ensemble.predict_scores(X[test_idx]), "hyperparams": hp.name}


def _adversarial_fold(features, labels, groups, configs, train_idx, test_idx, seed):
    ensemble = AdversarialEnsemble(configs=configs, seed=child_seed(seed, "fit")).fit(
        features[train_idx], labels[train_idx], groups[train_idx])
    return {"scores": ensemble.predict_scores(features[test_idx], groups[test_idx]),
            "hyperparams": "tuned"}


def _post_fold(features, labels, groups, train_idx, test_idx, grid, inner_k, tol, seed):
    """Base ensemble on a reduced training split, with a held-out validation
    slice for fitting the relabeling threshold."""
    fit_rel, val_rel = stratified_split(labels[train_idx], groups[train_idx],
                                        held_out_fraction=0.25, seed=child_seed(seed, "val"))
    fit_idx, val_idx = train_idx[fit_rel], train_idx[val_rel]
    hp = select_hyperparams(features[fit_idx], labels[fit_idx], groups[fit_idx], list(grid),
                            inner_k=inner_k, seed=child_seed(seed, "select"), tol=tol)
    ensemble = PartitionedOvoEnsemble(
        C=hp.C, kernel=hp.kernel, tol=tol, calibration="cv", seed=child_seed(seed, "fit"),
    ).fit(features[fit_idx], labels[fit_idx], groups[fit_idx])
    return {
        "scores": ensemble.predict_scores(features[test_idx]),
        "val_idx": val_idx,
        "val_scores": ensemble.predict_scores(features[val_idx]),
        "hyperparams": hp.name,
    }


def _counterfactual_fold(features, labels, groups, train_idx, test_idx, hp: HyperParams,
                         tol, seed, mode: str = "retrain"):
    """Counterfactual prediction pair with the attribute in the input space.

    mode "retrain": a second ensemble is trained on a copy of the training set
    with every attribute value flipped, and both models predict the untouched
    test rows. mode "flip": a single ensemble predicts the test rows twice,
    once with original and once with flipped attribute values.
    """
    original = np.column_stack([features, groups.astype(np.float64)])
    flipped = np.column_stack([features, 1.0 - groups.astype(np.float64)])
    kwargs = dict(C=hp.C, kernel=hp.kernel, tol=tol, calibration="train")
    model_orig = PartitionedOvoEnsemble(seed=child_seed(seed, "orig"), **kwargs).fit(
        original[train_idx], labels[train_idx], groups[train_idx])
    if mode == "flip":
        return {
            "pred_original": model_orig.predict(original[test_idx]),
            "pred_perturbed": model_orig.predict(flipped[test_idx]),
        }
    model_pert = PartitionedOvoEnsemble(seed=child_seed(seed, "pert"), **kwargs).fit(
        flipped[train_idx], labels[train_idx], groups[train_idx])
    return {
        "pred_original": model_orig.predict(original[test_idx]),
        "pred_perturbed": model_pert.predict(original[test_idx]),
    }


# ---------------------------------------------------------------------------

def _summary_dict(summary: MetricSummary) -> dict:
    return {"mean": summary.mean, "std": summary.std,
            "n_folds": summary.n_folds, "n_excluded": summary.n_excluded}


def _evaluate_arm(fold_outputs, folds, labels, groups, relabeled=None):
    """Per-task fold reports + aggregated cell dicts from 3-class fold scores."""
    cells = {}
    for task in TASKS:
        reports = []
        per_fold = {}
        for f, (out, test_idx) in enumerate(zip(fold_outputs, folds)):
            mask = np.isin(labels[test_idx], (task.negative, task.positive))
            y_true = binary_truth(labels[test_idx][mask], task)
            y_pred, _ = binary_from_scores(out["scores"][mask], task)
            if relabeled is not None:
                y_pred = relabeled[task.name][f]
            reports.append(parity_report(y_true, y_pred, groups[test_idx][mask]))
        agg = aggregate_folds(reports)
        for name in reports[0].metrics():
            per_fold[name] = [r.metrics()[name] for r in reports]
        cells[task.name] = {
            "metrics": {k: _summary_dict(v) for k, v in agg.metrics.items()},
            "group_rates": {k: [_summary_dict(v[0]), _summary_dict(v[1])]
                            for k, v in agg.group_rates.items()},
            "per_fold": per_fold,
        }
    return cells


def _overall_utility(fold_outputs, folds, labels):
    wf1 = []
    ba = []
    for out, test_idx in zip(fold_outputs, folds):
        pred = np.asarray(LABELS)[np.argmax(out["scores"], axis=1)].astype(str)
        wf1.append(weighted_f1(labels[test_idx], pred))
        ba.append(balanced_accuracy(labels[test_idx], pred))
    return {"weighted_f1": _summary_dict(_summarize(wf1)),
            "balanced_accuracy": _summary_dict(_summarize(ba)),
            "per_fold": {"weighted_f1": wf1, "balanced_accuracy": ba}}


def _post_relabel(fold_outputs, folds, labels, groups):
    """Fit the relabeling threshold per task from the per-fold validation sets
    and apply it to the per-fold test predictions."""
    relabeled = {}
    thetas = {}
    for task in TASKS:
        val_sets = []
        for out in fold_outputs:
            val_idx = out["val_idx"]
            mask = np.isin(labels[val_idx], (task.negative, task.positive))
            y_true = binary_truth(labels[val_idx][mask], task)
            y_pred, p_pos = binary_from_scores(out["val_scores"][mask], task)
            val_sets.append((y_true, y_pred, p_pos, groups[val_idx][mask]))
        bounds = roc_bounds_cv(val_sets)
        task_relabels = []
        task_thetas = []
        for f, (out, test_idx) in enumerate(zip(fold_outputs, folds)):
            try:
                config = roc_fit(*val_sets[f], bounds=bounds)
            except ValueError as exc:
                logger.warning("fold %d %s: threshold fit failed (%s); leaving predictions as-is",
                               f, task.name, exc)
                config = None
            mask = np.isin(labels[test_idx], (task.negative, task.positive))
            y_pred, p_pos = binary_from_scores(out["scores"][mask], task)
            if config is not None:
                y_pred = roc_apply(y_pred, p_pos, groups[test_idx][mask], config)
                task_thetas.append({"theta": config.theta, "unprivileged": config.unprivileged,
                                    "lower": config.lower, "upper": config.upper})
            else:
                task_thetas.append(None)
            task_relabels.append(y_pred)
        relabeled[task.name] = task_relabels
        thetas[task.name] = task_thetas
    return relabeled, thetas


def run_audit(config: AuditConfig, jobs: int = 1) -> dict:
    """Execute the configured audit and return the report dictionary.

    Deterministic for a fixed (config, seed) regardless of the worker count:
    every work unit derives its own seed from the cell key.
    """
    cohort = load_cohort(config)
    logger.info("cohort loaded: %d records, %d features", len(cohort), cohort.n_features)
    features = cohort.features
    labels = cohort.labels
    parallel = Parallel(n_jobs=jobs)

    report = {
        "provenance": {"config_hash": config_hash(config), "seed": config.seed,
                       "package_version": __version__, "config": config.raw},
        "cells": {}, "overall_utility": {}, "counterfactual": {}, "proxy": {},
    }

    for attribute in config.attributes:
        spec = SensitiveSpec.for_attribute(attribute, config.age_threshold)
        groups = binarize(cohort, spec)
        folds = stratified_kfold(labels, groups, k=config.outer_folds,
                                 seed=child_seed(config.seed, "folds", attribute))
        train_sets = [np.setdiff1d(np.arange(len(labels)), test) for test in folds]
        cells = {task.name: {} for task in TASKS}
        utilities = {}
        extras: dict[str, dict] = {}

        adv_configs = None
        if "in" in config.mitigations:
            adv_configs = {}
            for task in TASKS:
                mask = np.isin(labels, (task.negative, task.positive))
                X_task = np.column_stack([features[mask], groups[mask].astype(np.float64)])
                y_task = (labels[mask] == task.positive).astype(np.int64)
                adv_configs[task.name] = adv_tune(
                    X_task, y_task, groups[mask], list(config.adversarial_grid),
                    k=config.adversarial_cv_folds,
                    seed=child_seed(config.seed, "adv-tune", attribute, task.name))
                logger.info("%s %s: adversarial config %s", attribute, task.name,
                            adv_configs[task.name])

        for mitigation in config.mitigations:
            seed_of = lambda f: child_seed(config.seed, attribute, mitigation, f)
            if mitigation in ("none", "pre", "pre+proxy"):
                covariates = None if mitigation == "none" else covariate_matrix(
                    cohort, spec, include_proxy=(mitigation == "pre+proxy"))
                outputs = parallel(
                    delayed(_base_fold)(features, labels, groups, covariates,
                                        train_sets[f], folds[f], config.grid,
                                        config.inner_folds, 1e-3, seed_of(f))
                    for f in range(len(folds)))
                relabeled = None
            elif mitigation == "in":
                outputs = parallel(
                    delayed(_adversarial_fold)(features, labels, groups, adv_configs,
                                               train_sets[f], folds[f], seed_of(f))
                    for f in range(len(folds)))
                relabeled = None
            elif mitigation == "post":
                outputs = parallel(
                    delayed(_post_fold)(features, labels, groups, train_sets[f], folds[f],
                                        config.grid, config.inner_folds, 1e-3, seed_of(f))
                    for f in range(len(folds)))
                relabeled, thetas = _post_relabel(outputs, folds, labels, groups)
                extras["post"] = {"thresholds": thetas}
            arm_cells = _evaluate_arm(outputs, folds, labels, groups, relabeled)
            for task_name, cell in arm_cells.items():
                cell["groups"] = list(spec.group_names)
                cell["hyperparams"] = [out["hyperparams"] for out in outputs]
                cells[task_name][mitigation] = cell
            utilities[mitigation] = _overall_utility(outputs, folds, labels)
            logger.info("%s / %s evaluated", attribute, mitigation)

        if config.counterfactual and "none" in config.mitigations:
            hp = config.grid[0]
            cf_outputs = parallel(
                delayed(_counterfactual_fold)(features, labels, groups, train_sets[f],
                                              folds[f], hp, 1e-3,
                                              child_seed(config.seed, attribute, "cf", f),
                                              config.counterfactual_mode)
                for f in range(len(folds)))
            overall = []
            per_group = ([], [])
            for out, test_idx in zip(cf_outputs, folds):
                result = counterfactual_consistency(out["pred_original"], out["pred_perturbed"],
                                                    groups[test_idx])
                overall.append(result.overall)
                per_group[0].append(result.per_group[0])
                per_group[1].append(result.per_group[1])
            report["counterfactual"][attribute] = {
                "overall": _summary_dict(_summarize(overall)),
                "per_group": [_summary_dict(_summarize(per_group[0])),
                              _summary_dict(_summarize(per_group[1]))],
                "per_fold": overall,
                "groups": list(spec.group_names),
            }

        if config.proxy_scan:
            scan = attribute_proxy_scan(cohort, spec,
                                        seed=child_seed(config.seed, "proxy", attribute))
            report["proxy"][attribute] = {
                "importances": [[name, value] for name, value in scan.importances],
                "flagged": scan.flagged,
                "auxiliary_accuracy": scan.auxiliary_accuracy,
            }

        report["cells"][attribute] = cells
        report["overall_utility"][attribute] = utilities
        if extras:
            report.setdefault("details", {})[attribute] = extras

    return report


def run_audit_to_dir(config: AuditConfig, out_dir, jobs: int = 1) -> dict:
    """Run the audit and write report.json plus rendered tables and charts.
    On failure every file written by this run is removed; the log remains."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        report = run_audit(config, jobs=jobs)
        report_path = out / "report.json"
        write_report_json(report, report_path)
        written.append(report_path)
        written.extend(render_outputs(report, out))
        return report
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        raise
