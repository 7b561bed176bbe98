"""Fairness audit and bias-mitigation toolkit for tabular diagnostic classifiers."""

__version__ = "0.1.0"

from .cohort import (
    Cohort,
    CsvSchema,
    SensitiveSpec,
    SyntheticConfig,
    binarize,
    generate_synthetic,
    load_csv,
    stratified_kfold,
    to_csv,
)
from .ensemble import (
    TASKS,
    BinaryTask,
    HyperParams,
    PartitionedOvoEnsemble,
    balanced_accuracy,
    nested_cv,
    weighted_f1,
)
from .fairness import (
    ParityReport,
    aggregate_folds,
    counterfactual_consistency,
    demographic_parity_ratio,
    equalized_odds_ratio,
    harmonic_mean,
    min_max_ratio,
    parity_report,
)

__all__ = [
    "__version__",
    "Cohort",
    "CsvSchema",
    "SensitiveSpec",
    "SyntheticConfig",
    "binarize",
    "generate_synthetic",
    "load_csv",
    "stratified_kfold",
    "to_csv",
    "TASKS",
    "BinaryTask",
    "HyperParams",
    "PartitionedOvoEnsemble",
    "balanced_accuracy",
    "nested_cv",
    "weighted_f1",
    "ParityReport",
    "aggregate_folds",
    "counterfactual_consistency",
    "demographic_parity_ratio",
    "equalized_odds_ratio",
    "harmonic_mean",
    "min_max_ratio",
    "parity_report",
]
