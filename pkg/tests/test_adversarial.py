import numpy as np
import pytest

from fairdiag.adversarial import (
    AdvConfig,
    AdvModel,
    AdversarialEnsemble,
    adv_train,
    adv_tune,
    adversary_accuracy,
    adversary_loss,
    debiased_step,
    default_adv_grid,
    loss_gradients,
    prediction_loss,
)
from fairdiag.cohort import SensitiveSpec, SyntheticConfig, binarize, generate_synthetic


def random_batch(seed=0, n=40, d=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, n).astype(float)
    a = rng.integers(0, 2, n).astype(float)
    model = AdvModel.init(d, 8, rng)
    model.u = rng.normal(0.0, 0.5, 3)
    model.c = float(rng.normal())
    return model, X, y, a


def proxy_data(seed=0, n=800, shift=1.0):
    """A group-confounded label signal next to a clean one, so a free
    classifier leaks the group through its logit."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n)
    y = rng.integers(0, 2, n)
    x_confounded = y + shift * a + rng.normal(0, 0.5, n)
    x_clean = y + rng.normal(0, 0.8, n)
    noise = rng.normal(0, 1.0, n)
    X = np.column_stack([x_confounded, x_clean, noise])
    return X, y, a


class TestGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_both_losses_match_finite_differences(self, seed):
        model, X, y, a = random_batch(seed)
        _, _, g_pred, g_adv, adv_grads = loss_gradients(model, X, y, a)
        eps = 1e-6
        rng = np.random.default_rng(seed + 100)

        def probe(field, index):
            arr = getattr(model, field)
            if np.isscalar(arr) or np.ndim(arr) == 0:
                setter = lambda v: setattr(model, field, v)
                base = float(arr)
                setter(base + eps)
                up_p, up_a = prediction_loss(model, X, y), adversary_loss(model, X, y, a)
                setter(base - eps)
                dn_p, dn_a = prediction_loss(model, X, y), adversary_loss(model, X, y, a)
                setter(base)
                return (up_p - dn_p) / (2 * eps), (up_a - dn_a) / (2 * eps)
            flat = arr.ravel()
            base = flat[index]
            flat[index] = base + eps
            up_p, up_a = prediction_loss(model, X, y), adversary_loss(model, X, y, a)
            flat[index] = base - eps
            dn_p, dn_a = prediction_loss(model, X, y), adversary_loss(model, X, y, a)
            flat[index] = base
            return (up_p - dn_p) / (2 * eps), (up_a - dn_a) / (2 * eps)

        for field in ("W1", "b1", "w2"):
            arr = getattr(model, field)
            for index in rng.choice(arr.size, size=min(4, arr.size), replace=False):
                num_p, num_a = probe(field, index)
                ana_p = g_pred[field].ravel()[index]
                ana_a = g_adv[field].ravel()[index]
                assert abs(num_p - ana_p) <= 1e-4 * max(1.0, abs(num_p))
                assert abs(num_a - ana_a) <= 1e-4 * max(1.0, abs(num_a))
        num_p, num_a = probe("b2", 0)
        assert abs(num_p - g_pred["b2"]) <= 1e-4 * max(1.0, abs(num_p))
        assert abs(num_a - g_adv["b2"]) <= 1e-4 * max(1.0, abs(num_a))
        for index in range(3):
            _, num_a = probe("u", index)
            assert abs(num_a - adv_grads["u"][index]) <= 1e-4 * max(1.0, abs(num_a))
        _, num_a = probe("c", 0)
        assert abs(num_a - adv_grads["c"]) <= 1e-4 * max(1.0, abs(num_a))


class TestDebiasedStep:
    def test_orthogonal_adversary_with_zero_weight_is_plain_gradient(self):
        g_pred = np.array([1.0, 0.0])
        g_adv = np.array([0.0, 2.0])
        np.testing.assert_allclose(debiased_step(g_pred, g_adv, 0.0), g_pred)

    def test_parallel_adversary_leaves_weighted_opposition(self):
        g_adv = np.array([3.0, 4.0])
        g_pred = 2.0 * g_adv
        step = debiased_step(g_pred, g_adv, 0.7)
        np.testing.assert_allclose(step, -0.7 * g_adv, atol=1e-12)

    def test_tiny_adversary_gradient_guard(self):
        g_pred = np.array([1.0, 1.0])
        g_adv = np.full(2, 1e-12)
        np.testing.assert_allclose(debiased_step(g_pred, g_adv, 1.0), g_pred - g_adv)


class TestTraining:
    def test_deterministic(self):
        X, y, a = proxy_data(seed=1, n=200)
        config = AdvConfig(epochs=5, batch_size=64, hidden_units=8, seed=7)
        m1 = adv_train(X, y, a, config)
        m2 = adv_train(X, y, a, config)
        np.testing.assert_array_equal(m1.W1, m2.W1)
        np.testing.assert_array_equal(m1.u, m2.u)

    def test_predictions_in_open_unit_interval(self):
        X, y, a = proxy_data(seed=2, n=300)
        model = adv_train(X, y, a, AdvConfig(epochs=5, seed=0))
        p = model.predict_proba(np.random.default_rng(0).normal(size=(1000, 3)))
        assert p.min() > 0.0 and p.max() < 1.0
        np.testing.assert_array_equal(p, model.predict_proba(np.random.default_rng(0).normal(size=(1000, 3))))

    def test_zero_weights_emit_half(self):
        model = AdvModel(W1=np.zeros((3, 4)), b1=np.zeros(4), w2=np.zeros(4), b2=0.0,
                         u=np.zeros(3), c=0.0)
        np.testing.assert_allclose(model.predict_proba(np.ones((5, 3))), 0.5)

    def test_learns_the_label(self):
        X, y, a = proxy_data(seed=3, shift=0.0)
        model = adv_train(X, y, a, AdvConfig(epochs=30, adversary_weight=0.0, seed=1))
        pred = (model.predict_proba(X) >= 0.5).astype(int)
        assert (pred == y).mean() > 0.8

    def test_adversary_suppression(self):
        X, y, a = proxy_data(seed=4)
        free = adv_train(X, y, a, AdvConfig(epochs=40, adversary_weight=0.0, seed=5))
        debiased = adv_train(X, y, a, AdvConfig(epochs=40, adversary_weight=1.0, seed=5))
        acc_free = adversary_accuracy(free, X, y, a)
        acc_debiased = adversary_accuracy(debiased, X, y, a)
        assert acc_debiased < acc_free

    def test_independent_attribute_keeps_adversary_at_base_rate(self):
        rng = np.random.default_rng(6)
        n = 1500
        X = rng.normal(size=(n, 4))
        y = (X[:, 0] > 0).astype(int)
        a = rng.integers(0, 2, n)
        model = adv_train(X, y, a, AdvConfig(epochs=20, adversary_weight=0.0, seed=2))
        base = max(a.mean(), 1 - a.mean())
        assert abs(adversary_accuracy(model, X, y, a) - base) <= 0.05

    def test_missing_group_rejected(self):
        X, y, _ = proxy_data(n=50)
        with pytest.raises(ValueError, match="groups"):
            adv_train(X, y, np.zeros(50, dtype=int), AdvConfig())


class TestTune:
    def test_grid_of_one_returned(self):
        X, y, a = proxy_data(seed=7, n=200)
        only = AdvConfig(epochs=3, batch_size=64, hidden_units=8)
        assert adv_tune(X, y, a, [only], k=2, seed=0) == only

    def test_chosen_config_beats_alpha_zero_on_biased_data(self):
        X, y, a = proxy_data(seed=8, n=500, shift=1.5)
        grid = [AdvConfig(epochs=15, hidden_units=8, adversary_weight=w) for w in (0.0, 1.0)]
        chosen = adv_tune(X, y, a, grid, k=3, seed=1)
        assert chosen in grid

    def test_empty_grid_rejected(self):
        X, y, a = proxy_data(n=60)
        with pytest.raises(ValueError, match="empty"):
            adv_tune(X, y, a, [], k=2, seed=0)

    def test_default_grid_size(self):
        assert len(default_adv_grid()) == 16


class TestEnsemble:
    def test_fit_predict_shapes(self):
        cfg = SyntheticConfig(n_per_class=(80, 30, 30), n_features=5, class_separation=6.0, seed=0)
        cohort = generate_synthetic(cfg)
        groups = binarize(cohort, SensitiveSpec.for_attribute("gender"))
        config = AdvConfig(epochs=10, batch_size=32, hidden_units=8)
        model = AdversarialEnsemble(configs={t: config for t in ("CN/MCI", "MCI/AD", "CN/AD")},
                                    seed=0).fit(cohort.features, cohort.labels, groups)
        assert len(model.members_) == 6
        scores = model.predict_scores(cohort.features, groups)
        assert scores.shape == (len(cohort), 3)
        assert scores.min() >= 0.0 and scores.max() <= 1.0
        pred = model.predict(cohort.features, groups)
        assert (pred == cohort.labels).mean() > 0.8
