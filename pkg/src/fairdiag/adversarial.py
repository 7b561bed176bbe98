"""In-processing mitigation: adversarial debiasing. A one-hidden-layer
classifier learns the label while an adversary predicts the sensitive group
from (logit, label, logit*label); the classifier's gradient is stripped of
the component that helps the adversary, minus a weighted adversary term."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cohort import LABELS, stratified_kfold
from .ensemble import TASKS, build_member_specs, child_seed, partition_majority, weighted_f1
from .fairness import confusion_by_group, equalized_odds_ratio, harmonic_mean
from .learners import Standardizer, _sigmoid
from .validation import check_binary_indicator, check_consistent_length, check_matrix

logger = logging.getLogger(__name__)

_EPS = 1e-8
_CLF_FIELDS = ("W1", "b1", "w2", "b2")
_ADV_FIELDS = ("u", "c")


@dataclass(frozen=True)
class AdvConfig:
    """Training hyperparameters of one adversarially debiased classifier."""

    epochs: int = 50
    batch_size: int = 64
    hidden_units: int = 16
    adversary_weight: float = 0.1
    learning_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.hidden_units) <= 0:
            raise ValueError("epochs, batch_size and hidden_units must be positive")
        if self.adversary_weight < 0:
            raise ValueError("adversary_weight must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def default_adv_grid() -> list[AdvConfig]:
    return [
        AdvConfig(epochs=e, batch_size=b, hidden_units=h, adversary_weight=a)
        for e in (50, 100)
        for b in (64, 128)
        for h in (16, 32)
        for a in (0.1, 1.0)
    ]


@dataclass
class AdvModel:
    """tanh hidden layer + sigmoid output classifier, logistic adversary."""

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    u: np.ndarray  # adversary weights over (logit, label, logit*label)
    c: float

    @classmethod
    def init(cls, n_features: int, hidden_units: int, rng: np.random.Generator) -> "AdvModel":
        scale = 1.0 / math.sqrt(n_features)
        return cls(
            W1=rng.normal(0.0, scale, (n_features, hidden_units)),
            b1=np.zeros(hidden_units),
            w2=rng.normal(0.0, 1.0 / math.sqrt(hidden_units), hidden_units),
            b2=0.0,
            u=rng.normal(0.0, 0.1, 3),
            c=0.0,
        )

    def logits(self, X) -> np.ndarray:
        h = np.tanh(X @ self.W1 + self.b1)
        return h @ self.w2 + self.b2

    def predict_proba(self, X) -> np.ndarray:
        X = check_matrix(X)
        if X.shape[1] != self.W1.shape[0]:
            raise ValueError(f"expected {self.W1.shape[0]} features, got {X.shape[1]}")
        return _sigmoid(self.logits(X))

    def adversary_proba(self, X, y) -> np.ndarray:
        z = self.logits(X)
        return _sigmoid(self.u[0] * z + self.u[1] * y + self.u[2] * z * y + self.c)


def _bce(p, target) -> float:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))


def prediction_loss(model: AdvModel, X, y) -> float:
    return _bce(_sigmoid(model.logits(X)), y)


def adversary_loss(model: AdvModel, X, y, a) -> float:
    return _bce(model.adversary_proba(X, y), a)


def _backprop_from_dz(model: AdvModel, X, h, dz) -> dict[str, np.ndarray]:
    """Gradients of a loss w.r.t. classifier parameters given dL/dz."""
    dh = np.outer(dz, model.w2) * (1.0 - h * h)
    return {
        "W1": X.T @ dh,
        "b1": dh.sum(axis=0),
        "w2": h.T @ dz,
        "b2": dz.sum(),
    }


def loss_gradients(model: AdvModel, X, y, a) -> tuple[float, float, dict, dict, dict]:
    """(pred_loss, adv_loss, classifier grads of each, adversary grads)."""
    m = len(y)
    h = np.tanh(X @ model.W1 + model.b1)
    z = h @ model.w2 + model.b2
    p = _sigmoid(z)
    s = model.u[0] * z + model.u[1] * y + model.u[2] * z * y + model.c
    q = _sigmoid(s)

    dz_pred = (p - y) / m
    grads_pred = _backprop_from_dz(model, X, h, dz_pred)

    ds = (q - a) / m
    dz_adv = ds * (model.u[0] + model.u[2] * y)
    grads_adv = _backprop_from_dz(model, X, h, dz_adv)
    adv_grads = {
        "u": np.array([np.dot(ds, z), np.dot(ds, y), np.dot(ds, z * y)]),
        "c": ds.sum(),
    }
    return prediction_loss(model, X, y), adversary_loss(model, X, y, a), grads_pred, grads_adv, adv_grads


def debiased_step(g_pred: np.ndarray, g_adv: np.ndarray, weight: float) -> np.ndarray:
    """g_P minus its projection onto unit-normalized g_A, minus weight * g_A."""
    norm = np.linalg.norm(g_adv)
    if norm > _EPS:
        unit = g_adv / norm
        projection = np.sum(g_pred * unit) * unit
    else:
        projection = 0.0
    return g_pred - projection - weight * g_adv


def adv_train(X, y, a, config: AdvConfig) -> AdvModel:
    """Mini-batch adversarial training; the adversary descends its own loss,
    the classifier follows the projected debiased gradient. The learning rate
    decays as lr_0 / (1 + epoch)."""
    X = check_matrix(X)
    y = check_binary_indicator(y, "y").astype(np.float64)
    a = check_binary_indicator(a, "a").astype(np.float64)
    check_consistent_length(X, y, a)
    if len(np.unique(y)) < 2 or len(np.unique(a)) < 2:
        raise ValueError("both labels and both groups must be present")
    rng = np.random.default_rng(config.seed)
    model = AdvModel.init(X.shape[1], config.hidden_units, rng)
    n = len(y)
    for epoch in range(config.epochs):
        lr = config.learning_rate / (1.0 + epoch)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            pred_loss, adv_loss_value, g_pred, g_adv, adv_grads = loss_gradients(
                model, X[batch], y[batch], a[batch])
            if not (math.isfinite(pred_loss) and math.isfinite(adv_loss_value)):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}: "
                    f"prediction={pred_loss}, adversary={adv_loss_value}")
            model.u = model.u - lr * adv_grads["u"]
            model.c = model.c - lr * adv_grads["c"]
            for name in _CLF_FIELDS:
                step = debiased_step(g_pred[name], g_adv[name], config.adversary_weight)
                setattr(model, name, getattr(model, name) - lr * step)
    return model


def adversary_accuracy(model: AdvModel, X, y, a) -> float:
    """Accuracy of the trained adversary at recovering the group."""
    q = model.adversary_proba(X, np.asarray(y, dtype=np.float64))
    return float(np.mean((q >= 0.5).astype(np.int64) == np.asarray(a)))


def adv_tune(X, y, a, grid: list[AdvConfig], *, k: int = 5, seed: int = 0) -> AdvConfig:
    """Pick the config maximizing mean cross-validated harmonic mean of the
    equalized odds ratio and weighted F1; ties prefer a smaller adversary
    weight, then fewer epochs. CV folds are stratified by (label, group)."""
    if not grid:
        raise ValueError("empty adversarial grid")
    X = check_matrix(X)
    y = check_binary_indicator(y, "y")
    a = check_binary_indicator(a, "a")
    folds = stratified_kfold(y, a, k=k, seed=child_seed(seed, "adv-tune"))
    ranked = []
    failures = []
    for order, config in enumerate(grid):
        scores = []
        try:
            for f, val in enumerate(folds):
                rest = np.setdiff1d(np.arange(len(y)), val)
                model = adv_train(X[rest], y[rest], a[rest],
                                  replace(config, seed=child_seed(seed, "adv-fit", order, f)))
                pred = (model.predict_proba(X[val]) >= 0.5).astype(np.int64)
                eo = equalized_odds_ratio(confusion_by_group(y[val], pred, a[val]))
                scores.append(harmonic_mean(eo, weighted_f1(y[val], pred)))
        except (RuntimeError, ValueError) as exc:
            failures.append(f"{config}: {exc}")
            continue
        usable = [s for s in scores if not math.isnan(s)]
        if usable:
            ranked.append((float(np.mean(usable)), -config.adversary_weight, -config.epochs,
                           -order, config))
    if not ranked:
        raise RuntimeError("every adversarial config failed: " + "; ".join(failures))
    return max(ranked)[4]


@dataclass
class _AdvMember:
    task_name: str
    half: int
    model: AdvModel


class AdversarialEnsemble(BaseEstimator):
    """The partitioned one-versus-one ensemble with every member replaced by
    an adversarially debiased classifier. The sensitive group indicator is
    part of the input space, so predictions need the groups too."""

    def __init__(self, configs: Mapping[str, AdvConfig] = None, seed: int = 0):
        self.configs = configs
        self.seed = seed

    def fit(self, X, labels, groups) -> "AdversarialEnsemble":
        X = check_matrix(X)
        labels = np.asarray(labels, dtype=str)
        groups = check_binary_indicator(groups, "groups")
        check_consistent_length(X, labels, groups)
        configs = dict(self.configs or {})
        for task in TASKS:
            configs.setdefault(task.name, AdvConfig())
        self.scaler_ = Standardizer().fit(X)
        Z = np.column_stack([self.scaler_.transform(X), groups.astype(np.float64)])
        halves = partition_majority(labels, groups, seed=child_seed(self.seed, "partition"))
        self.members_ = []
        for k, spec in enumerate(build_member_specs(halves, labels)):
            y01 = (labels[spec.indices] == spec.task.positive).astype(np.int64)
            config = replace(configs[spec.task.name], seed=child_seed(self.seed, "member", k))
            model = adv_train(Z[spec.indices], y01, groups[spec.indices], config)
            self.members_.append(_AdvMember(task_name=spec.task.name, half=spec.half, model=model))
        return self

    def predict_scores(self, X, groups) -> np.ndarray:
        if not hasattr(self, "members_"):
            raise NotFittedError("AdversarialEnsemble is not fitted")
        groups = check_binary_indicator(groups, "groups")
        Z = np.column_stack([self.scaler_.transform(check_matrix(X)), groups.astype(np.float64)])
        sums = np.zeros((len(Z), len(LABELS)))
        counts = np.zeros(len(LABELS))
        col = {label: i for i, label in enumerate(LABELS)}
        for member in self.members_:
            task = next(t for t in TASKS if t.name == member.task_name)
            p_pos = member.model.predict_proba(Z)
            sums[:, col[task.positive]] += p_pos
            sums[:, col[task.negative]] += 1.0 - p_pos
            counts[col[task.positive]] += 1
            counts[col[task.negative]] += 1
        return sums / counts

    def predict(self, X, groups) -> np.ndarray:
        scores = self.predict_scores(X, groups)
        return np.asarray(LABELS)[np.argmax(scores, axis=1)].astype(str)
