"""Shipped synthetic presets and ready-to-run audit configurations.

The presets are JSON-shaped dicts so they can be written to disk, fed to the
CLI, or passed straight to AuditConfig.from_dict. Knob values are pinned
together with the shipped seed; the acceptance suite depends on them.
"""

from __future__ import annotations

SHIPPED_SEED = 7

# n = 5000 at the 6:1:1 class mix, every bias knob off
UNBIASED_COHORT = {
    "n_per_class": [3750, 625, 625],
    "n_features": 20,
    "class_separation": 8.0,
    "seed": SHIPPED_SEED,
}

# feature shift plus label noise against the male subgroup: error-rate
# disparity concentrated in the CN/MCI cell that the accuracy parities
# barely register
BIASED_COHORT = {
    "n_per_class": [2000, 400, 400],
    "n_features": 20,
    "class_separation": 8.0,
    "subgroup_shift": {"gender": 3.0},
    "subgroup_label_noise": {"gender": 0.01},
    "seed": SHIPPED_SEED,
}

# prevalence skew only: selection-rate disparity without error-rate disparity
SKEWED_COHORT = {
    "n_per_class": [2000, 400, 400],
    "n_features": 20,
    "class_separation": 8.0,
    "prevalence_skew": {"age": 0.8},
    "seed": SHIPPED_SEED,
}

# single fast grid point: nested selection collapses to a direct fit
ACCEPTANCE_GRID = [{"C": 1.0, "kernel": "rbf"}]

ACCEPTANCE_ADV_GRID = [
    {"epochs": 40, "batch_size": 128, "hidden_units": 16, "adversary_weight": 0.1},
    {"epochs": 40, "batch_size": 128, "hidden_units": 16, "adversary_weight": 1.0},
]


def audit_preset(cohort: dict, attributes: list[str], mitigations: list[str], *,
                 seed: int = SHIPPED_SEED, counterfactual: bool = True,
                 proxy_scan: bool = True) -> dict:
    """Assemble a complete audit configuration around a cohort preset."""
    return {
        "seed": seed,
        "attributes": list(attributes),
        "mitigations": list(mitigations),
        "data": {"synthetic": dict(cohort)},
        "cv": {"outer_folds": 5, "inner_folds": 4},
        "grid": [dict(g) for g in ACCEPTANCE_GRID],
        "adversarial_grid": [dict(g) for g in ACCEPTANCE_ADV_GRID],
        "counterfactual": counterfactual,
        "proxy_scan": proxy_scan,
    }
