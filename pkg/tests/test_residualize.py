import numpy as np
import pytest

from fairdiag.cohort import CN, SensitiveSpec, SyntheticConfig, binarize, generate_synthetic
from fairdiag.residualize import (
    CovariateResidualizer,
    covariate_matrix,
    fit_covariates,
    residualize,
)


def fixture_cohort(seed=0, proxy=0.0, shift=0.0):
    cfg = SyntheticConfig(
        n_per_class=(300, 80, 80), n_features=8, class_separation=4.0,
        proxy_strength=proxy, subgroup_shift={"gender": shift} if shift else {}, seed=seed,
    )
    return generate_synthetic(cfg)


class TestResidualizerCore:
    def test_exact_linear_relation_recovered(self):
        a = np.array([0.0, 0.0, 1.0, 1.0, 0.0, 1.0])
        feature = 3.0 + 2.0 * a
        model = CovariateResidualizer().fit(feature[:, None], a[:, None])
        # predicted value at a=0 is the intercept, slope is the a=1 difference
        pred0 = 5.0 - model.transform(np.array([[5.0]]), np.array([[0.0]]))[0, 0]
        pred1 = 5.0 - model.transform(np.array([[5.0]]), np.array([[1.0]]))[0, 0]
        assert pred0 == pytest.approx(3.0, abs=1e-10)
        assert pred1 - pred0 == pytest.approx(2.0, abs=1e-10)

    def test_record_prediction_subtraction(self):
        a = np.array([0.0, 1.0, 0.0, 1.0])
        feature = 3.0 + 2.0 * a
        model = CovariateResidualizer().fit(feature[:, None], a[:, None])
        adjusted = model.transform(np.array([[5.0]]), np.array([[0.0]]))
        assert adjusted[0, 0] == pytest.approx(2.0, abs=1e-10)

    def test_constant_covariate_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            CovariateResidualizer().fit(np.random.rand(5, 2), np.zeros((5, 1)))

    def test_uncorrelated_covariate_keeps_slope_near_zero(self):
        rng = np.random.default_rng(0)
        n = 4000
        a = rng.integers(0, 2, n).astype(float)
        feature = rng.normal(size=n)
        model = CovariateResidualizer().fit(feature[:, None], a[:, None])
        delta = (
            model.transform(np.zeros((1, 1)), np.array([[0.0]]))[0, 0]
            - model.transform(np.zeros((1, 1)), np.array([[1.0]]))[0, 0]
        )
        # slope within 3 standard errors of zero
        se = feature.std() / (a.std() * np.sqrt(n))
        assert abs(delta) < 3.0 * se


class TestCohortResidualization:
    def test_orthogonality_on_fitting_sample(self):
        cohort = fixture_cohort(shift=2.0)
        spec = SensitiveSpec.for_attribute("gender")
        train = np.arange(len(cohort))
        model = fit_covariates(cohort, spec, train)
        adjusted = residualize(cohort, model, spec)
        groups = binarize(cohort, spec).astype(float)
        cn = cohort.labels == CN
        centered = groups[cn] - groups[cn].mean()
        scale = np.abs(cohort.features[cn]).max()
        for j in range(cohort.n_features):
            dot = abs(np.dot(adjusted.features[cn][:, j], centered))
            assert dot <= 1e-8 * cn.sum() * max(scale, 1.0)
            corr = np.corrcoef(adjusted.features[cn][:, j], groups[cn])[0, 1]
            assert abs(corr) <= 1e-6

    def test_idempotence(self):
        cohort = fixture_cohort(shift=1.5)
        spec = SensitiveSpec.for_attribute("race")
        train = np.arange(len(cohort))
        once = residualize(cohort, fit_covariates(cohort, spec, train), spec)
        twice = residualize(once, fit_covariates(once, spec, train), spec)
        assert np.abs(twice.features - once.features).max() <= 1e-8

    def test_labels_and_groups_untouched(self):
        cohort = fixture_cohort()
        spec = SensitiveSpec.for_attribute("age")
        model = fit_covariates(cohort, spec, np.arange(len(cohort)))
        adjusted = residualize(cohort, model, spec)
        np.testing.assert_array_equal(adjusted.labels, cohort.labels)
        np.testing.assert_array_equal(adjusted.gender, cohort.gender)
        np.testing.assert_allclose(adjusted.age, cohort.age)
        np.testing.assert_allclose(adjusted.total_brain_volume, cohort.total_brain_volume)

    def test_proxy_column_included(self):
        cohort = fixture_cohort(proxy=0.8)
        spec = SensitiveSpec.for_attribute("gender")
        cov = covariate_matrix(cohort, spec, include_proxy=True)
        assert cov.shape == (len(cohort), 2)
        np.testing.assert_allclose(cov[:, 1], cohort.total_brain_volume)
        model = fit_covariates(cohort, spec, np.arange(len(cohort)), include_proxy=True)
        adjusted = residualize(cohort, model, spec, include_proxy=True)
        assert np.all(np.isfinite(adjusted.features))

    def test_collinear_proxy_falls_back_to_ridge(self):
        cohort = fixture_cohort()
        spec = SensitiveSpec.for_attribute("gender")
        groups = binarize(cohort, spec).astype(float)
        collinear = cohort.features.copy()
        model = CovariateResidualizer().fit(
            collinear, np.column_stack([groups, groups]))
        out = model.transform(collinear, np.column_stack([groups, groups]))
        assert np.all(np.isfinite(out))

    def test_removes_injected_shift(self):
        cfg = SyntheticConfig(
            n_per_class=(1500, 500, 500), n_features=8, class_separation=4.0,
            subgroup_shift={"gender": 3.0}, seed=1,
        )
        cohort = generate_synthetic(cfg)
        spec = SensitiveSpec.for_attribute("gender")
        groups = binarize(cohort, spec)
        model = fit_covariates(cohort, spec, np.arange(len(cohort)))
        adjusted = residualize(cohort, model, spec)
        for label in np.unique(cohort.labels):
            mask = cohort.labels == label
            gap_before = np.linalg.norm(
                cohort.features[mask & (groups == 1)].mean(axis=0)
                - cohort.features[mask & (groups == 0)].mean(axis=0))
            gap_after = np.linalg.norm(
                adjusted.features[mask & (groups == 1)].mean(axis=0)
                - adjusted.features[mask & (groups == 0)].mean(axis=0))
            assert gap_after < gap_before * 0.4

    def test_fit_requires_cn_in_training_split(self):
        cohort = fixture_cohort()
        spec = SensitiveSpec.for_attribute("gender")
        non_cn = np.nonzero(cohort.labels != CN)[0]
        with pytest.raises(ValueError, match="control-class"):
            fit_covariates(cohort, spec, non_cn)

    def test_raw_age_mode(self):
        cohort = fixture_cohort()
        spec = SensitiveSpec.for_attribute("age")
        cov = covariate_matrix(cohort, spec, include_proxy=False, use_raw_age=True)
        np.testing.assert_allclose(cov[:, 0], cohort.age)
