"""Imbalance-aware diagnostic classifier: the majority class is split into two
halves, each half feeds three one-versus-one binary subsets, and the six
resulting calibrated SVMs vote by mean per-class probability."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cohort import CN, LABELS, SEVERITY, stratified_kfold, stratified_split
from .learners import KernelSpec, PlattScaler, Standardizer, SvmClassifier
from .validation import check_consistent_length, check_matrix

logger = logging.getLogger(__name__)


def child_seed(*parts) -> int:
    """Stable 64-bit seed derived from the given parts (order-sensitive)."""
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class BinaryTask:
    """One class pair; the positive class is the more impaired diagnosis."""

    negative: str
    positive: str

    def __post_init__(self):
        if SEVERITY[self.positive] <= SEVERITY[self.negative]:
            raise ValueError("positive class must be the more impaired one")

    @property
    def name(self) -> str:
        return f"{self.negative}/{self.positive}"


TASKS = (BinaryTask("CN", "MCI"), BinaryTask("MCI", "AD"), BinaryTask("CN", "AD"))
TASK_BY_NAME = {t.name: t for t in TASKS}


@dataclass(frozen=True)
class HyperParams:
    C: float
    kernel: KernelSpec

    @property
    def name(self) -> str:
        k = self.kernel.kind if self.kernel.gamma is None else f"{self.kernel.kind}({self.kernel.gamma:g})"
        return f"C={self.C:g},{k}"


def default_grid() -> list[HyperParams]:
    return [
        HyperParams(C=c, kernel=KernelSpec(kind))
        for c in (0.1, 1.0, 10.0)
        for kind in ("linear", "rbf")
    ]


def weighted_f1(y_true, y_pred) -> float:
    """Support-weighted mean of per-class F1 over the classes present in y_true."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    check_consistent_length(y_true, y_pred)
    if len(y_true) == 0:
        raise ValueError("empty input")
    total = 0.0
    for label in np.unique(y_true):
        tp = np.sum((y_true == label) & (y_pred == label))
        fp = np.sum((y_true != label) & (y_pred == label))
        fn = np.sum((y_true == label) & (y_pred != label))
        f1 = 2.0 * tp / (2.0 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
        total += np.mean(y_true == label) * f1
    return float(total)


def balanced_accuracy(y_true, y_pred) -> float:
    """Mean per-class recall over the classes present in y_true."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    check_consistent_length(y_true, y_pred)
    if len(y_true) == 0:
        raise ValueError("empty input")
    predicted_only = set(np.unique(y_pred)) - set(np.unique(y_true))
    if predicted_only:
        logger.warning("classes %s absent from labels; excluded from balanced accuracy",
                       sorted(map(str, predicted_only)))
    recalls = [
        np.mean(y_pred[y_true == label] == label) for label in np.unique(y_true)
    ]
    return float(np.mean(recalls))


def partition_majority(labels, groups, seed: int, majority: str = CN) -> tuple[np.ndarray, np.ndarray]:
    """Split the majority-class indices into two random disjoint halves,
    stratified by subgroup; sizes differ by at most one."""
    labels = np.asarray(labels)
    counts = {label: int(np.sum(labels == label)) for label in np.unique(labels)}
    if counts.get(majority, 0) < max(counts.values()):
        raise ValueError(f"{majority} is not the largest class: {counts}")
    idx = np.nonzero(labels == majority)[0]
    strata = np.zeros(len(idx), dtype=np.int64) if groups is None else np.asarray(groups)[idx]
    rng = np.random.default_rng(seed)
    first: list[int] = []
    second: list[int] = []
    for value in sorted(set(strata.tolist())):
        members = rng.permutation(idx[strata == value])
        half = len(members) // 2
        if len(members) % 2 == 1 and len(first) <= len(second):
            half += 1
        first.extend(int(i) for i in members[:half])
        second.extend(int(i) for i in members[half:])
    return np.array(sorted(first), dtype=np.intp), np.array(sorted(second), dtype=np.intp)


@dataclass(frozen=True)
class MemberSpec:
    """Training recipe of one ensemble member."""

    task: BinaryTask
    half: int
    indices: np.ndarray


def build_member_specs(halves: tuple[np.ndarray, np.ndarray], labels) -> list[MemberSpec]:
    """Six training subsets: per majority half, one subset per class pair.
    The two MCI/AD subsets hold identical data and differ only by seed."""
    labels = np.asarray(labels)
    specs = []
    for half, half_idx in enumerate(halves):
        for task in TASKS:
            parts = []
            for cls in (task.negative, task.positive):
                parts.append(half_idx if cls == CN else np.nonzero(labels == cls)[0])
            specs.append(MemberSpec(task=task, half=half, indices=np.sort(np.concatenate(parts))))
    return specs


@dataclass
class _Member:
    task: BinaryTask
    half: int
    svm: SvmClassifier
    platt: PlattScaler


class PartitionedOvoEnsemble(BaseEstimator):
    """Six calibrated binary SVMs over two majority-class partitions.

    calibration controls how the Platt scaler sees its decision values:
    "cv" pools held-out decisions from calibration_folds internal folds,
    "holdout" uses a single 20% split, "train" uses in-sample decisions
    (optimistic; reserved for model-pair consistency runs).
    """

    def __init__(self, C: float = 1.0, kernel="linear", gamma: float | None = None,
                 tol: float = 1e-3, calibration: str = "cv", calibration_folds: int = 3,
                 seed: int = 0):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.calibration = calibration
        self.calibration_folds = calibration_folds
        self.seed = seed

    def _svm(self) -> SvmClassifier:
        return SvmClassifier(C=self.C, kernel=self.kernel, gamma=self.gamma, tol=self.tol)

    def _fit_member(self, X, y, seed: int) -> tuple[SvmClassifier, PlattScaler]:
        order = np.random.default_rng(seed).permutation(len(y))
        X, y = X[order], y[order]
        platt = PlattScaler()
        if self.calibration == "train":
            svm = self._svm().fit(X, y)
            platt.fit(svm.decision_function(X), y)
            return svm, platt
        if self.calibration == "holdout":
            kept, held = stratified_split(y, held_out_fraction=0.2, seed=child_seed(seed, "cal"))
            probe = self._svm().fit(X[kept], y[kept])
            platt.fit(probe.decision_function(X[held]), y[held])
            return self._svm().fit(X, y), platt
        if self.calibration == "cv":
            folds = stratified_kfold(y, k=self.calibration_folds, seed=child_seed(seed, "cal"))
            decisions = np.zeros(len(y))
            for fold in folds:
                rest = np.setdiff1d(np.arange(len(y)), fold)
                probe = self._svm().fit(X[rest], y[rest])
                decisions[fold] = probe.decision_function(X[fold])
            platt.fit(decisions, y)
            return self._svm().fit(X, y), platt
        raise ValueError(f"unknown calibration mode {self.calibration!r}")

    def fit(self, X, labels, groups=None) -> "PartitionedOvoEnsemble":
        X = check_matrix(X)
        labels = np.asarray(labels, dtype=str)
        check_consistent_length(X, labels)
        unknown = set(np.unique(labels)) - set(LABELS)
        if unknown:
            raise ValueError(f"unknown labels {sorted(unknown)}")
        self.scaler_ = Standardizer().fit(X)
        Z = self.scaler_.transform(X)
        halves = partition_majority(labels, groups, seed=child_seed(self.seed, "partition"))
        self.members_ = []
        for k, spec in enumerate(build_member_specs(halves, labels)):
            y = np.where(labels[spec.indices] == spec.task.positive, 1.0, -1.0)
            svm, platt = self._fit_member(Z[spec.indices], y, child_seed(self.seed, "member", k))
            self.members_.append(_Member(task=spec.task, half=spec.half, svm=svm, platt=platt))
        return self

    def _check_fitted(self):
        if not hasattr(self, "members_"):
            raise NotFittedError("ensemble is not fitted")

    def predict_scores(self, X) -> np.ndarray:
        """Per-class score = mean calibrated probability over the four members
        whose task involves the class; columns follow LABELS order."""
        self._check_fitted()
        Z = self.scaler_.transform(check_matrix(X))
        sums = np.zeros((len(Z), len(LABELS)))
        counts = np.zeros(len(LABELS))
        col = {label: i for i, label in enumerate(LABELS)}
        for member in self.members_:
            p_pos = member.platt.predict_proba(member.svm.decision_function(Z))
            sums[:, col[member.task.positive]] += p_pos
            sums[:, col[member.task.negative]] += 1.0 - p_pos
            counts[col[member.task.positive]] += 1
            counts[col[member.task.negative]] += 1
        return sums / counts

    def predict(self, X) -> np.ndarray:
        scores = self.predict_scores(X)
        # argmax returns the first maximum; LABELS order breaks ties toward
        # the less impaired class
        return np.asarray(LABELS)[np.argmax(scores, axis=1)].astype(str)


def binary_truth(labels, task: BinaryTask) -> np.ndarray:
    """0/1 truth vector for records whose label belongs to the task pair."""
    labels = np.asarray(labels)
    if not np.isin(labels, (task.negative, task.positive)).all():
        raise ValueError("labels outside the task pair")
    return (labels == task.positive).astype(np.int64)


def binary_from_scores(scores, task: BinaryTask) -> tuple[np.ndarray, np.ndarray]:
    """Restrict voting scores to a class pair.

    Returns (predictions in {0,1}, positive-class posterior) where the
    posterior renormalizes the two involved class scores; a 0/0 score pair
    maps to 0.5 and ties predict the less impaired class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    col = {label: i for i, label in enumerate(LABELS)}
    s_neg = scores[:, col[task.negative]]
    s_pos = scores[:, col[task.positive]]
    total = s_neg + s_pos
    p_pos = np.full(len(scores), 0.5)
    ok = total > 0
    p_pos[ok] = s_pos[ok] / total[ok]
    return (s_pos > s_neg).astype(np.int64), p_pos


@dataclass
class FoldResult:
    test_indices: np.ndarray
    hyperparams: HyperParams
    ensemble: PartitionedOvoEnsemble


@dataclass
class NestedCvResult:
    folds: list[FoldResult]
    oof_scores: np.ndarray
    oof_pred: np.ndarray

    @property
    def selected(self) -> list[HyperParams]:
        return [f.hyperparams for f in self.folds]


def select_hyperparams(X, labels, groups, grid: list[HyperParams], *, inner_k: int = 4,
                       seed: int = 0, calibration: str = "holdout",
                       tol: float = 1e-3) -> HyperParams:
    """Inner-CV grid selection maximizing pooled out-of-fold weighted F1,
    breaking ties by balanced accuracy, then smaller C, then grid order."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if len(grid) == 1:
        return grid[0]
    labels = np.asarray(labels, dtype=str)
    inner = stratified_kfold(labels, groups, k=inner_k, seed=child_seed(seed, "inner"))
    ranked = []
    for order, hp in enumerate(grid):
        pooled_pred = np.empty(len(labels), dtype=labels.dtype)
        for j, val in enumerate(inner):
            fit_rel = np.setdiff1d(np.arange(len(labels)), val)
            model = PartitionedOvoEnsemble(
                C=hp.C, kernel=hp.kernel, tol=tol, calibration=calibration,
                seed=child_seed(seed, "inner-fit", j),
            ).fit(X[fit_rel], labels[fit_rel],
                  None if groups is None else np.asarray(groups)[fit_rel])
            pooled_pred[val] = model.predict(X[val])
        wf1 = weighted_f1(labels, pooled_pred)
        ba = balanced_accuracy(labels, pooled_pred)
        ranked.append((wf1, ba, -hp.C, -order, hp))
    return max(ranked)[4]


def nested_cv(X, labels, groups, grid: list[HyperParams], *, outer_k: int = 5,
              inner_k: int = 4, seed: int = 0, calibration: str = "cv",
              inner_calibration: str = "holdout", tol: float = 1e-3) -> NestedCvResult:
    """Outer-fold ensembles with inner-fold hyperparameter selection.

    Every record gets exactly one out-of-fold prediction from its outer
    fold's ensemble.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    X = check_matrix(X)
    labels = np.asarray(labels, dtype=str)
    outer = stratified_kfold(labels, groups, k=outer_k, seed=child_seed(seed, "outer"))
    oof_scores = np.full((len(labels), len(LABELS)), np.nan)
    oof_pred = np.empty(len(labels), dtype=labels.dtype)
    folds: list[FoldResult] = []
    for f, test_idx in enumerate(outer):
        train_idx = np.setdiff1d(np.arange(len(labels)), test_idx)
        tr_groups = None if groups is None else np.asarray(groups)[train_idx]
        best = select_hyperparams(
            X[train_idx], labels[train_idx], tr_groups, grid, inner_k=inner_k,
            seed=child_seed(seed, "select", f), calibration=inner_calibration, tol=tol)
        ensemble = PartitionedOvoEnsemble(
            C=best.C, kernel=best.kernel, tol=tol, calibration=calibration,
            seed=child_seed(seed, "outer-fit", f),
        ).fit(X[train_idx], labels[train_idx], tr_groups)
        oof_scores[test_idx] = ensemble.predict_scores(X[test_idx])
        oof_pred[test_idx] = ensemble.predict(X[test_idx])
        folds.append(FoldResult(test_indices=test_idx, hyperparams=best, ensemble=ensemble))
    return NestedCvResult(folds=folds, oof_scores=oof_scores, oof_pred=oof_pred)
