"""Post-processing mitigation: reject option classification. Predictions whose
positive-class posterior falls inside an uncertainty band around the decision
boundary are relabeled in favor of the unprivileged group; the band width is
chosen among 100 candidates to maximize the equalized odds ratio."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .fairness import confusion_by_group, equalized_odds_ratio, group_rates
from .validation import check_binary_indicator, check_consistent_length, check_probabilities

logger = logging.getLogger(__name__)

N_CANDIDATES = 100
FULL_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class RocConfig:
    """Fitted relabeling rule: band threshold, unprivileged group, search bounds."""

    theta: float
    unprivileged: int
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.5 <= self.lower < self.upper <= 1.0:
            raise ValueError("bounds must satisfy 0.5 <= lower < upper <= 1.0")
        if not self.lower <= self.theta <= self.upper:
            raise ValueError("theta must lie inside the bounds")
        if self.unprivileged not in (0, 1):
            raise ValueError("unprivileged group must be 0 or 1")


def candidate_thetas(lower: float, upper: float, n: int = N_CANDIDATES) -> np.ndarray:
    """n equally spaced candidates in (lower, upper]: lower + i*(upper-lower)/n."""
    step = (upper - lower) / n
    return lower + step * np.arange(1, n + 1)


def roc_apply(y_pred, p_pos, groups, config: RocConfig) -> np.ndarray:
    """Relabel inside the critical region max(p, 1-p) <= theta: unprivileged
    records get the favorable (positive) label, privileged the unfavorable;
    everything outside the region is untouched."""
    y_pred = check_binary_indicator(y_pred, "y_pred")
    p_pos = check_probabilities(p_pos, "p_pos")
    groups = check_binary_indicator(groups, "groups")
    check_consistent_length(y_pred, p_pos, groups)
    region = np.maximum(p_pos, 1.0 - p_pos) <= config.theta
    out = y_pred.copy()
    out[region] = np.where(groups[region] == config.unprivileged, 1, 0)
    return out


def identify_unprivileged(y_true, y_pred, groups) -> int:
    """The group with the lower TPR on the validation split; ties and
    undefined TPRs fall back to group 0."""
    gc = confusion_by_group(y_true, y_pred, groups)
    tpr = group_rates(gc)["tpr"]
    if np.isnan(tpr).all():
        logger.warning("TPR undefined for both groups; defaulting unprivileged to group 0")
        return 0
    if np.isnan(tpr).any():
        return int(np.nonzero(np.isnan(tpr))[0][0])
    return int(np.argmin(tpr))


def roc_fit(y_true, y_pred, p_pos, groups, bounds: tuple[float, float] = FULL_RANGE,
            n_candidates: int = N_CANDIDATES) -> RocConfig:
    """Pick the theta maximizing validation equalized odds over the candidate
    grid; theta = lower (least intervention) serves as the no-op reference and
    wins all ties."""
    y_true = check_binary_indicator(y_true, "y_true")
    unprivileged = identify_unprivileged(y_true, y_pred, groups)
    lower, upper = bounds
    thetas = np.concatenate([[lower], candidate_thetas(lower, upper, n_candidates)])
    best_theta = math.nan
    best_eo = -math.inf
    for theta in thetas:
        config = RocConfig(theta=float(theta), unprivileged=unprivileged, lower=lower, upper=upper)
        relabeled = roc_apply(y_pred, p_pos, groups, config)
        eo = equalized_odds_ratio(confusion_by_group(y_true, relabeled, groups))
        if not math.isnan(eo) and eo > best_eo + 1e-12:
            best_eo = eo
            best_theta = float(theta)
    if math.isnan(best_theta):
        raise ValueError("equalized odds undefined for every candidate threshold")
    return RocConfig(theta=best_theta, unprivileged=unprivileged, lower=lower, upper=upper)


def roc_bounds_cv(fold_fits: list[tuple], n_candidates: int = N_CANDIDATES) -> tuple[float, float]:
    """Search bounds from per-fold optima over the full range.

    fold_fits holds (y_true, y_pred, p_pos, groups) validation tuples, one per
    fold. Returns (min, max) of the per-fold best thetas widened by one grid
    step on each side and clipped to (0.5, 1.0].
    """
    optima = []
    for fold in fold_fits:
        try:
            optima.append(roc_fit(*fold, bounds=FULL_RANGE, n_candidates=n_candidates).theta)
        except ValueError as exc:
            logger.warning("fold skipped while bounding the threshold search: %s", exc)
    if not optima:
        raise ValueError("no usable folds for the threshold search bounds")
    if len(optima) == 1:
        logger.warning("threshold search bounds rest on a single usable fold")
    step = (FULL_RANGE[1] - FULL_RANGE[0]) / n_candidates
    lower = max(min(optima) - step, FULL_RANGE[0])
    upper = min(max(optima) + step, FULL_RANGE[1])
    if lower >= upper:
        lower = max(upper - step, FULL_RANGE[0])
    return float(lower), float(upper)
