"""Pre-processing mitigation: every feature is regressed on the sensitive
attribute (optionally plus the total-brain-volume proxy) over control-class
training records, and all records are replaced by their residuals."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cohort import CN, Cohort, SensitiveSpec, binarize
from .learners import LinearRegressor
from .validation import check_consistent_length, check_matrix


class CovariateResidualizer(BaseEstimator):
    """One linear model per feature, fit on the rows passed to fit (the
    control-class training subset) and applied to any rows via transform.

    Covariates are standardized internally so that a raw-volume proxy column
    does not wreck the conditioning of the normal equations; coefficients are
    stored in the standardized basis together with the affine map.
    """

    def __init__(self, ridge_fallback: float = 1e-8):
        self.ridge_fallback = ridge_fallback

    def fit(self, features, covariates) -> "CovariateResidualizer":
        F = check_matrix(features, "features")
        C = check_matrix(covariates, "covariates")
        check_consistent_length(F, C)
        spans = np.ptp(C, axis=0)
        if np.any(spans == 0):
            constant = int(np.nonzero(spans == 0)[0][0])
            raise ValueError(f"covariate column {constant} is constant on the fitting sample")
        self.center_ = C.mean(axis=0)
        self.scale_ = np.where(C.std(axis=0) > 0, C.std(axis=0), 1.0)
        Z = (C - self.center_) / self.scale_
        self.models_ = [
            LinearRegressor(ridge_fallback=self.ridge_fallback).fit(Z, F[:, j])
            for j in range(F.shape[1])
        ]
        return self

    def transform(self, features, covariates) -> np.ndarray:
        if not hasattr(self, "models_"):
            raise NotFittedError("CovariateResidualizer is not fitted")
        F = check_matrix(features, "features")
        C = check_matrix(covariates, "covariates")
        check_consistent_length(F, C)
        if F.shape[1] != len(self.models_):
            raise ValueError(f"expected {len(self.models_)} features, got {F.shape[1]}")
        Z = (C - self.center_) / self.scale_
        predicted = np.column_stack([m.predict(Z) for m in self.models_])
        return F - predicted


def covariate_matrix(cohort: Cohort, spec: SensitiveSpec, include_proxy: bool,
                     use_raw_age: bool = False) -> np.ndarray:
    """Covariate columns for the adjustment: the binary group indicator
    (group_a -> 0, group_b -> 1; raw years behind the use_raw_age flag for
    the age attribute) plus total brain volume when include_proxy is set."""
    if use_raw_age and spec.attribute == "age":
        base = cohort.age.astype(np.float64)
    else:
        base = binarize(cohort, spec).astype(np.float64)
    columns = [base]
    if include_proxy:
        columns.append(cohort.total_brain_volume.astype(np.float64))
    return np.column_stack(columns)


def fit_covariates(cohort: Cohort, spec: SensitiveSpec, train_indices, *,
                   include_proxy: bool = False, use_raw_age: bool = False) -> CovariateResidualizer:
    """Fit the per-feature adjustment on control-class records within the
    training split only; evaluation rows must never reach the fit."""
    train_indices = np.asarray(train_indices, dtype=np.intp)
    cn_train = train_indices[cohort.labels[train_indices] == CN]
    if len(cn_train) == 0:
        raise ValueError("no control-class records in the training split")
    covariates = covariate_matrix(cohort, spec, include_proxy, use_raw_age)
    return CovariateResidualizer().fit(cohort.features[cn_train], covariates[cn_train])


def residualize(cohort: Cohort, model: CovariateResidualizer, spec: SensitiveSpec, *,
                include_proxy: bool = False, use_raw_age: bool = False) -> Cohort:
    """Replace every feature by its residual; labels and attributes untouched."""
    covariates = covariate_matrix(cohort, spec, include_proxy, use_raw_age)
    adjusted = model.transform(cohort.features, covariates)
    return cohort.with_features(adjusted)
