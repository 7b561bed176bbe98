"""Proxy-feature detection: Shapley attributions of an auxiliary model that
predicts each sensitive attribute from the features plus total brain volume.
Features whose global importance dwarfs the rest are flagged as proxies."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .cohort import Cohort, SensitiveSpec, binarize
from .ensemble import child_seed
from .learners import LogisticClassifier, Standardizer
from .validation import check_matrix

logger = logging.getLogger(__name__)

EXACT_MAX_FEATURES = 12
DEFAULT_COALITIONS = 2048
DEFAULT_DOMINANCE = 10.0


def _coalition_values(predict_fn, instance, background, Z, chunk: int = 2**22):
    """v(S) for each coalition row of Z: masked-out features take background
    values, averaged over the background sample."""
    m, d = background.shape
    values = np.empty(len(Z))
    rows_per_chunk = max(1, chunk // (m * d))
    for start in range(0, len(Z), rows_per_chunk):
        mask = Z[start:start + rows_per_chunk].astype(bool)
        mixed = np.where(mask[:, None, :], instance[None, None, :], background[None, :, :])
        preds = np.asarray(predict_fn(mixed.reshape(-1, d)), dtype=np.float64)
        values[start:start + rows_per_chunk] = preds.reshape(len(mask), m).mean(axis=1)
    return values


def _kernel_weight(d: int, s: int) -> float:
    return (d - 1.0) / (math.comb(d, s) * s * (d - s))


def kernel_shap(predict_fn, instance, background, n_coalitions: int = DEFAULT_COALITIONS,
                seed: int = 0) -> tuple[np.ndarray, float]:
    """Per-feature Shapley attributions of predict_fn at one instance.

    Solves the Shapley-kernel weighted least squares over coalitions with the
    efficiency constraint eliminated exactly, enumerating all 2^d coalitions
    when d <= 12 and sampling complement pairs otherwise.

    Returns (attributions, base_value).
    """
    instance = np.asarray(instance, dtype=np.float64).ravel()
    background = check_matrix(background, "background")
    d = len(instance)
    if background.shape[1] != d:
        raise ValueError("background and instance dimensions differ")
    base = float(np.mean(predict_fn(background)))
    full = float(np.asarray(predict_fn(instance[None, :])).ravel()[0])
    total = full - base
    if d == 1:
        return np.array([total]), base

    exact = d <= EXACT_MAX_FEATURES
    if not exact and n_coalitions < 2 * d + 4:
        raise ValueError(f"n_coalitions must be >= {2 * d + 4} for {d} features")

    if exact:
        rows = []
        for s in range(1, d):
            for subset in combinations(range(d), s):
                z = np.zeros(d)
                z[list(subset)] = 1.0
                rows.append((z, _kernel_weight(d, s)))
        Z = np.array([r[0] for r in rows])
        weights = np.array([r[1] for r in rows])
    else:
        rng = np.random.default_rng(seed)
        sizes = np.arange(1, d)
        size_p = np.array([(d - 1.0) / (s * (d - s)) for s in sizes])
        size_p /= size_p.sum()
        counts: dict[bytes, int] = {}
        half = n_coalitions // 2
        drawn_sizes = rng.choice(sizes, size=half, p=size_p)
        for s in drawn_sizes:
            z = np.zeros(d)
            z[rng.choice(d, size=int(s), replace=False)] = 1.0
            for row in (z, 1.0 - z):  # complement pairing
                key = row.astype(np.int8).tobytes()
                counts[key] = counts.get(key, 0) + 1
        Z = np.array([np.frombuffer(k, dtype=np.int8).astype(np.float64) for k in counts])
        weights = np.array([c for c in counts.values()], dtype=np.float64)

    values = _coalition_values(predict_fn, instance, background, Z)
    # eliminate the last coefficient through the efficiency constraint
    target = values - base - Z[:, -1] * total
    design = Z[:, :-1] - Z[:, [-1]]
    sw = np.sqrt(weights)
    phi_rest, *_ = np.linalg.lstsq(design * sw[:, None], target * sw, rcond=None)
    phi = np.concatenate([phi_rest, [total - phi_rest.sum()]])
    return phi, base


@dataclass(frozen=True)
class AttributionSet:
    """Per-instance attributions plus the shared base value."""

    values: np.ndarray  # (n_instances, n_features)
    base_value: float
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if self.values.shape[1] != len(self.feature_names):
            raise ValueError("one name per attributed feature required")

    def efficiency_gap(self, predictions) -> np.ndarray:
        """|sum(attributions) - (prediction - base)| per instance."""
        return np.abs(self.values.sum(axis=1) - (np.asarray(predictions) - self.base_value))


def global_importance(attributions: AttributionSet) -> list[tuple[str, float]]:
    """Features ranked by mean absolute attribution, descending; ties keep
    input order."""
    if len(attributions.values) == 0:
        raise ValueError("no instances attributed")
    importance = np.abs(attributions.values).mean(axis=0)
    order = np.argsort(-importance, kind="stable")
    return [(attributions.feature_names[i], float(importance[i])) for i in order]


def detect_proxies(importances: list[tuple[str, float]],
                   dominance_factor: float = DEFAULT_DOMINANCE) -> list[str]:
    """Flag features whose importance exceeds dominance_factor times the
    median importance of the remaining features."""
    if dominance_factor <= 1:
        raise ValueError("dominance_factor must exceed 1")
    if len(importances) < 3:
        logger.warning("proxy detection skipped: needs at least 3 features, got %d",
                       len(importances))
        return []
    values = np.array([v for _, v in importances])
    flagged = []
    for i, (name, value) in enumerate(importances):
        others = np.delete(values, i)
        if value > dominance_factor * float(np.median(others)):
            flagged.append(name)
    return flagged


@dataclass(frozen=True)
class ProxyReport:
    attribute: str
    importances: list[tuple[str, float]]
    flagged: list[str]
    auxiliary_accuracy: float


def attribute_proxy_scan(cohort: Cohort, spec: SensitiveSpec, *, n_instances: int = 100,
                         background_size: int = 100, n_coalitions: int = DEFAULT_COALITIONS,
                         dominance_factor: float = DEFAULT_DOMINANCE, seed: int = 0) -> ProxyReport:
    """Fit the auxiliary attribute predictor (logistic regression on all
    features plus total brain volume) and rank its Shapley importances."""
    target = binarize(cohort, spec)
    names = cohort.feature_names + ("total_brain_volume",)
    X = np.column_stack([cohort.features, cohort.total_brain_volume])
    Z = Standardizer().fit_transform(X)
    model = LogisticClassifier(l2=1e-3).fit(Z, target.astype(np.float64))
    accuracy = float(np.mean(model.predict(Z) == target))

    rng = np.random.default_rng(child_seed(seed, "proxy", spec.attribute))
    bg_idx = rng.choice(len(Z), size=min(background_size, len(Z)), replace=False)
    inst_idx = rng.choice(len(Z), size=min(n_instances, len(Z)), replace=False)
    values = np.empty((len(inst_idx), Z.shape[1]))
    base = 0.0
    for r, i in enumerate(inst_idx):
        values[r], base = kernel_shap(model.predict_proba, Z[i], Z[bg_idx],
                                      n_coalitions=n_coalitions,
                                      seed=child_seed(seed, "coalitions", r))
    attributions = AttributionSet(values=values, base_value=base, feature_names=names)
    ranked = global_importance(attributions)
    return ProxyReport(
        attribute=spec.attribute,
        importances=ranked,
        flagged=detect_proxies(ranked, dominance_factor),
        auxiliary_accuracy=accuracy,
    )
