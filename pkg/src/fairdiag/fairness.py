"""Group and counterfactual fairness metrics over binary task predictions.

All functions operate on aligned binary vectors: y_true / y_pred in {0, 1}
(1 = the more-impaired class of the task) and groups in {0, 1}. Undefined
quantities (0/0 rates, empty groups) propagate as NaN and are excluded from
fold aggregation with a logged warning; raw per-group rates are always
reported alongside the ratios so that zero-rate pathologies stay visible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import balanced_accuracy, weighted_f1
from .validation import check_binary_indicator, check_consistent_length

logger = logging.getLogger(__name__)

RATIO_FIELDS = (
    "demographic_parity_ratio",
    "equalized_odds_ratio",
    "balanced_accuracy_parity",
    "f1_parity",
    "tpr_ratio",
    "fpr_ratio",
    "fnr_ratio",
    "tnr_ratio",
)
METRIC_FIELDS = RATIO_FIELDS + ("weighted_f1", "harmonic_mean")
RATE_FIELDS = ("tpr", "fpr", "fnr", "tnr", "positive_rate", "balanced_accuracy", "f1")


@dataclass(frozen=True)
class GroupConfusion:
    """Per-subgroup confusion counts for one binary task."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray
    empty: tuple[bool, bool]

    def totals(self) -> np.ndarray:
        return self.tp + self.fp + self.fn + self.tn


def confusion_by_group(y_true, y_pred, groups) -> GroupConfusion:
    y_true = check_binary_indicator(y_true, "y_true")
    y_pred = check_binary_indicator(y_pred, "y_pred")
    groups = check_binary_indicator(groups, "groups")
    check_consistent_length(y_true, y_pred, groups)
    tp = np.zeros(2)
    fp = np.zeros(2)
    fn = np.zeros(2)
    tn = np.zeros(2)
    for g in (0, 1):
        mask = groups == g
        t, p = y_true[mask], y_pred[mask]
        tp[g] = np.sum((t == 1) & (p == 1))
        fp[g] = np.sum((t == 0) & (p == 1))
        fn[g] = np.sum((t == 1) & (p == 0))
        tn[g] = np.sum((t == 0) & (p == 0))
    empty = (not np.any(groups == 0), not np.any(groups == 1))
    if any(empty):
        logger.warning("empty subgroup (group %d); its ratios are undefined", empty.index(True))
    return GroupConfusion(tp=tp, fp=fp, fn=fn, tn=tn, empty=empty)


def min_max_ratio(value_a: float, value_b: float) -> float:
    """min/max of two nonnegative rates; (0, 0) -> 1.0 (no disparity),
    exactly one zero -> 0.0; NaN input -> NaN."""
    if math.isnan(value_a) or math.isnan(value_b):
        return math.nan
    if value_a < 0 or value_b < 0:
        raise ValueError("rates must be nonnegative")
    hi = max(value_a, value_b)
    if hi == 0.0:
        return 1.0
    return min(value_a, value_b) / hi


def _rate(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(2, np.nan)
    for g in (0, 1):
        if den[g] > 0:
            out[g] = num[g] / den[g]
    return out


def group_rates(gc: GroupConfusion, y_pred=None, groups=None) -> dict[str, np.ndarray]:
    """Per-group raw rates; positive_rate requires the prediction vector."""
    rates = {
        "tpr": _rate(gc.tp, gc.tp + gc.fn),
        "fpr": _rate(gc.fp, gc.fp + gc.tn),
        "fnr": _rate(gc.fn, gc.tp + gc.fn),
        "tnr": _rate(gc.tn, gc.fp + gc.tn),
    }
    ba = np.full(2, np.nan)
    f1 = np.full(2, np.nan)
    for g in (0, 1):
        if not np.isnan(rates["tpr"][g]) and not np.isnan(rates["tnr"][g]):
            ba[g] = (rates["tpr"][g] + rates["tnr"][g]) / 2.0
        denom = 2 * gc.tp[g] + gc.fp[g] + gc.fn[g]
        if denom > 0:
            f1[g] = 2 * gc.tp[g] / denom
    rates["balanced_accuracy"] = ba
    rates["f1"] = f1
    if y_pred is not None and groups is not None:
        pr = np.full(2, np.nan)
        y_pred = np.asarray(y_pred)
        groups = np.asarray(groups)
        for g in (0, 1):
            mask = groups == g
            if mask.any():
                pr[g] = float(np.mean(y_pred[mask]))
        rates["positive_rate"] = pr
    return rates


def demographic_parity_ratio(y_pred, groups) -> float:
    """min/max of per-group positive-prediction rates; ground truth ignored."""
    y_pred = check_binary_indicator(y_pred, "y_pred")
    groups = check_binary_indicator(groups, "groups")
    check_consistent_length(y_pred, groups)
    rates = []
    for g in (0, 1):
        mask = groups == g
        if not mask.any():
            logger.warning("demographic parity undefined: group %d is empty", g)
            return math.nan
        rates.append(float(np.mean(y_pred[mask])))
    return min_max_ratio(rates[0], rates[1])


def equalized_odds_ratio(gc: GroupConfusion) -> float:
    """(TPR min/max + FPR min/max) / 2; undefined if either rate is undefined."""
    rates = group_rates(gc)
    tpr_r = min_max_ratio(rates["tpr"][0], rates["tpr"][1])
    fpr_r = min_max_ratio(rates["fpr"][0], rates["fpr"][1])
    if math.isnan(tpr_r) or math.isnan(fpr_r):
        logger.warning("equalized odds undefined: a group has no positives or no negatives")
        return math.nan
    return (tpr_r + fpr_r) / 2.0


def utility_parities(gc: GroupConfusion) -> tuple[float, float]:
    """(balanced_accuracy_parity, f1_parity) as min/max ratios."""
    rates = group_rates(gc)
    ba = min_max_ratio(rates["balanced_accuracy"][0], rates["balanced_accuracy"][1])
    f1 = min_max_ratio(rates["f1"][0], rates["f1"][1])
    if math.isnan(ba):
        logger.warning("balanced accuracy parity undefined for a group")
    if math.isnan(f1):
        logger.warning("f1 parity undefined for a group")
    return ba, f1


def harmonic_mean(eo_ratio: float, wf1: float) -> float:
    """2 / (1/eo + 1/wf1); zero if either input is zero (flagged), NaN propagates."""
    if math.isnan(eo_ratio) or math.isnan(wf1):
        return math.nan
    if eo_ratio < 0 or wf1 < 0:
        raise ValueError("harmonic mean inputs must be nonnegative")
    if eo_ratio == 0.0 or wf1 == 0.0:
        logger.warning("harmonic mean hit a zero input (eo=%.4g, wf1=%.4g)", eo_ratio, wf1)
        return 0.0
    return 2.0 / (1.0 / eo_ratio + 1.0 / wf1)


@dataclass(frozen=True)
class ParityReport:
    """All fairness ratios and utility metrics for one evaluation slice."""

    demographic_parity_ratio: float
    equalized_odds_ratio: float
    balanced_accuracy_parity: float
    f1_parity: float
    tpr_ratio: float
    fpr_ratio: float
    fnr_ratio: float
    tnr_ratio: float
    weighted_f1: float
    harmonic_mean: float
    group_rates: dict[str, tuple[float, float]] = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_FIELDS}


def parity_report(y_true, y_pred, groups) -> ParityReport:
    """Assemble the full per-slice report from aligned binary vectors."""
    gc = confusion_by_group(y_true, y_pred, groups)
    rates = group_rates(gc, y_pred=y_pred, groups=groups)
    ba_parity, f1_parity = utility_parities(gc)
    eo = equalized_odds_ratio(gc)
    wf1 = weighted_f1(np.asarray(y_true), np.asarray(y_pred))
    return ParityReport(
        demographic_parity_ratio=demographic_parity_ratio(y_pred, groups),
        equalized_odds_ratio=eo,
        balanced_accuracy_parity=ba_parity,
        f1_parity=f1_parity,
        tpr_ratio=min_max_ratio(rates["tpr"][0], rates["tpr"][1]),
        fpr_ratio=min_max_ratio(rates["fpr"][0], rates["fpr"][1]),
        fnr_ratio=min_max_ratio(rates["fnr"][0], rates["fnr"][1]),
        tnr_ratio=min_max_ratio(rates["tnr"][0], rates["tnr"][1]),
        weighted_f1=wf1,
        harmonic_mean=harmonic_mean(eo, wf1),
        group_rates={k: (float(v[0]), float(v[1])) for k, v in rates.items()},
    )


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    n_folds: int
    n_excluded: int


@dataclass(frozen=True)
class AggregateReport:
    """Per-entry mean and sample std across folds, undefined folds excluded."""

    metrics: dict[str, MetricSummary]
    group_rates: dict[str, tuple[MetricSummary, MetricSummary]]


def _summarize(values: list[float]) -> MetricSummary:
    arr = np.asarray(values, dtype=np.float64)
    defined = arr[~np.isnan(arr)]
    n_excluded = int(np.isnan(arr).sum())
    if n_excluded:
        logger.warning("excluded %d undefined fold entries from aggregation", n_excluded)
    if len(defined) == 0:
        return MetricSummary(math.nan, math.nan, 0, n_excluded)
    std = float(np.std(defined, ddof=1)) if len(defined) > 1 else 0.0
    return MetricSummary(float(defined.mean()), std, len(defined), n_excluded)


def aggregate_folds(reports: list[ParityReport]) -> AggregateReport:
    if len(reports) < 2:
        raise ValueError("need at least two folds to aggregate")
    metrics = {
        name: _summarize([getattr(r, name) for r in reports])
        for name in METRIC_FIELDS
    }
    rate_names = sorted({k for r in reports for k in r.group_rates})
    rates = {
        name: (
            _summarize([r.group_rates[name][0] for r in reports if name in r.group_rates]),
            _summarize([r.group_rates[name][1] for r in reports if name in r.group_rates]),
        )
        for name in rate_names
    }
    return AggregateReport(metrics=metrics, group_rates=rates)


@dataclass(frozen=True)
class CounterfactualResult:
    """Share of predictions unchanged under the sensitive-attribute flip."""

    overall: float
    per_group: tuple[float, float]


def counterfactual_consistency(pred_original, pred_perturbed, groups) -> CounterfactualResult:
    pred_original = np.asarray(pred_original)
    pred_perturbed = np.asarray(pred_perturbed)
    groups = check_binary_indicator(groups, "groups")
    check_consistent_length(pred_original, pred_perturbed, groups)
    agree = (pred_original == pred_perturbed).astype(np.float64)
    per_group = tuple(
        float(agree[groups == g].mean()) if np.any(groups == g) else math.nan for g in (0, 1)
    )
    return CounterfactualResult(overall=float(agree.mean()), per_group=per_group)
