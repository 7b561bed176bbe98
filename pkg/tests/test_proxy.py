import numpy as np
import pytest

from fairdiag.cohort import SensitiveSpec, SyntheticConfig, generate_synthetic
from fairdiag.learners import LogisticClassifier, _sigmoid
from fairdiag.proxy import (
    AttributionSet,
    attribute_proxy_scan,
    detect_proxies,
    global_importance,
    kernel_shap,
)


def linear_fn(w):
    w = np.asarray(w, dtype=float)
    return lambda X: np.asarray(X) @ w


class TestKernelShap:
    def test_linear_model_exact_attributions(self):
        # oracle: linear SHAP is w_j * (x_j - background mean_j)
        background = np.array([[1.0, 1.0], [-1.0, -1.0]])  # mean (0, 0)
        phi, base = kernel_shap(linear_fn([2.0, 3.0]), np.array([1.0, 1.0]), background)
        np.testing.assert_allclose(phi, [2.0, 3.0], atol=1e-6)
        assert base == pytest.approx(0.0, abs=1e-12)

    def test_linear_oracle_with_nonzero_background(self):
        rng = np.random.default_rng(0)
        background = rng.normal(size=(30, 6))
        w = rng.normal(size=6)
        x = rng.normal(size=6)
        phi, _ = kernel_shap(linear_fn(w), x, background)
        np.testing.assert_allclose(phi, w * (x - background.mean(axis=0)), atol=1e-8)

    def test_constant_model_all_zero(self):
        background = np.random.default_rng(1).normal(size=(10, 4))
        phi, base = kernel_shap(lambda X: np.full(len(X), 7.0), np.zeros(4), background)
        np.testing.assert_allclose(phi, 0.0, atol=1e-10)
        assert base == pytest.approx(7.0)

    def test_sampled_matches_exact_enumeration(self):
        rng = np.random.default_rng(2)
        background = rng.normal(size=(20, 3))
        x = rng.normal(size=3)

        def nonlinear(X):
            X = np.asarray(X)
            return _sigmoid(X @ np.array([1.0, -2.0, 0.5]) + 0.3 * X[:, 0] * X[:, 1])

        exact_phi, _ = kernel_shap(nonlinear, x, background)
        import fairdiag.proxy as proxy_mod

        original = proxy_mod.EXACT_MAX_FEATURES
        proxy_mod.EXACT_MAX_FEATURES = 0  # force the sampling path
        try:
            sampled_phi, _ = kernel_shap(nonlinear, x, background, n_coalitions=4096, seed=3)
        finally:
            proxy_mod.EXACT_MAX_FEATURES = original
        np.testing.assert_allclose(sampled_phi, exact_phi, atol=1e-3)

    def test_efficiency_axiom(self):
        rng = np.random.default_rng(3)
        background = rng.normal(size=(25, 5))
        model = LogisticClassifier(l2=1e-2).fit(background, (rng.random(25) < 0.5).astype(float))
        for _ in range(5):
            x = rng.normal(size=5)
            phi, base = kernel_shap(model.predict_proba, x, background)
            prediction = model.predict_proba(x[None, :])[0]
            assert abs(phi.sum() - (prediction - base)) <= 1e-4

    def test_symmetry_for_identical_features(self):
        rng = np.random.default_rng(4)
        col = rng.normal(size=15)
        background = np.column_stack([col, col, rng.normal(size=15)])

        def symmetric(X):
            X = np.asarray(X)
            return X[:, 0] + X[:, 1] + 0.5 * X[:, 2]

        x = np.array([1.3, 1.3, -0.2])
        phi, _ = kernel_shap(symmetric, x, background)
        assert abs(phi[0] - phi[1]) <= 1e-3

    def test_dummy_feature_gets_nothing(self):
        rng = np.random.default_rng(5)
        background = rng.normal(size=(20, 4))
        phi, _ = kernel_shap(linear_fn([1.0, 0.0, -2.0, 0.5]), rng.normal(size=4), background)
        assert abs(phi[1]) <= 1e-6

    def test_single_feature_direct(self):
        background = np.array([[0.0], [2.0]])
        phi, base = kernel_shap(linear_fn([3.0]), np.array([2.0]), background)
        assert base == pytest.approx(3.0)
        assert phi[0] == pytest.approx(3.0)

    def test_insufficient_coalitions_rejected(self):
        import fairdiag.proxy as proxy_mod

        original = proxy_mod.EXACT_MAX_FEATURES
        proxy_mod.EXACT_MAX_FEATURES = 0
        try:
            with pytest.raises(ValueError, match="n_coalitions"):
                kernel_shap(linear_fn([1.0, 1.0, 1.0]), np.zeros(3), np.zeros((4, 3)),
                            n_coalitions=5)
        finally:
            proxy_mod.EXACT_MAX_FEATURES = original


class TestImportanceRanking:
    def test_dominant_feature_first(self):
        attr = AttributionSet(
            values=np.array([[0.5, 0.01, -0.02], [-0.4, 0.02, 0.01]]),
            base_value=0.0,
            feature_names=("big", "small_a", "small_b"),
        )
        ranked = global_importance(attr)
        assert ranked[0][0] == "big"
        assert ranked[0][1] == pytest.approx(0.45)

    def test_all_zero_keeps_input_order(self):
        attr = AttributionSet(values=np.zeros((3, 3)), base_value=0.1,
                              feature_names=("a", "b", "c"))
        assert [name for name, _ in global_importance(attr)] == ["a", "b", "c"]

    def test_efficiency_gap_helper(self):
        attr = AttributionSet(values=np.array([[0.2, 0.3]]), base_value=0.1,
                              feature_names=("a", "b"))
        np.testing.assert_allclose(attr.efficiency_gap(np.array([0.6])), [0.0])


class TestDetectProxies:
    def test_dominant_importance_flagged(self):
        ranked = [("tbv", 0.4)] + [(f"f{i}", 0.003 - 0.0001 * i) for i in range(8)]
        assert detect_proxies(ranked) == ["tbv"]

    def test_uniform_importances_unflagged(self):
        ranked = [(f"f{i}", 0.1) for i in range(6)]
        assert detect_proxies(ranked) == []

    def test_two_features_skipped_with_warning(self, caplog):
        with caplog.at_level("WARNING"):
            assert detect_proxies([("a", 0.5), ("b", 0.001)]) == []
        assert "skipped" in caplog.text

    def test_all_zero_flags_nothing(self):
        assert detect_proxies([(f"f{i}", 0.0) for i in range(5)]) == []

    def test_factor_must_exceed_one(self):
        with pytest.raises(ValueError):
            detect_proxies([("a", 1.0), ("b", 1.0), ("c", 1.0)], dominance_factor=1.0)


class TestProxyScan:
    def test_planted_volume_proxy_is_flagged(self):
        cfg = SyntheticConfig(n_per_class=(400, 120, 120), n_features=6,
                              class_separation=4.0, proxy_strength=0.9, seed=0)
        cohort = generate_synthetic(cfg)
        report = attribute_proxy_scan(
            cohort, SensitiveSpec.for_attribute("gender"),
            n_instances=40, background_size=60, seed=0)
        assert report.importances[0][0] == "total_brain_volume"
        assert "total_brain_volume" in report.flagged
        assert report.auxiliary_accuracy > 0.7

    def test_no_proxy_without_signal(self):
        cfg = SyntheticConfig(n_per_class=(300, 100, 100), n_features=6,
                              class_separation=4.0, proxy_strength=0.0, seed=1)
        cohort = generate_synthetic(cfg)
        report = attribute_proxy_scan(
            cohort, SensitiveSpec.for_attribute("gender"),
            n_instances=25, background_size=50, seed=1)
        assert "total_brain_volume" not in report.flagged
