"""Cohort data model: CSV ingestion, attribute binarization, stratified folds,
and a bias-injectable synthetic cohort generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CN = "CN"
MCI = "MCI"
AD = "AD"
LABELS = (CN, MCI, AD)
# severity order: CN < MCI < AD; ties in voting break toward the less impaired
SEVERITY = {CN: 0, MCI: 1, AD: 2}

ATTRIBUTES = ("gender", "race", "age")
GENDERS = ("female", "male")
RACES = ("white", "black")
DEFAULT_AGE_THRESHOLD = 69.0

# Per-class subgroup shares (group_a share) typical of large multi-site aging
# cohorts, used as the skew=1 target of the synthetic generator. group_a is
# (female, white, younger); "base" is the class-independent share at skew=0.
REFERENCE_GROUP_SHARES = {
    "gender": {"base": 0.548, CN: 0.572, MCI: 0.434, AD: 0.522},
    "race": {"base": 0.877, CN: 0.864, MCI: 0.943, AD: 0.890},
    "age": {"base": 0.500, CN: 0.605, MCI: 0.275, AD: 0.159},
}

_TBV_MEAN = 1_150_000.0  # mm^3
_TBV_STD = 110_000.0


class SchemaError(ValueError):
    """A required column is missing or a header is malformed."""


class ParseError(ValueError):
    """A cell could not be parsed as the expected type."""


@dataclass(frozen=True)
class SensitiveSpec:
    """Binarization rule for one sensitive attribute.

    group_a is the reference group (female / white / age <= threshold);
    group_b the complement. For age, records exactly at the threshold go
    to the younger group.
    """

    attribute: str
    group_a: str
    group_b: str
    age_threshold: float = DEFAULT_AGE_THRESHOLD

    def __post_init__(self):
        if self.attribute not in ATTRIBUTES:
            raise ValueError(f"unknown sensitive attribute {self.attribute!r}")

    @classmethod
    def for_attribute(cls, attribute: str, age_threshold: float = DEFAULT_AGE_THRESHOLD) -> "SensitiveSpec":
        if attribute == "gender":
            return cls("gender", *GENDERS)
        if attribute == "race":
            return cls("race", *RACES)
        if attribute == "age":
            return cls("age", f"age<={age_threshold:g}", f"age>{age_threshold:g}", age_threshold)
        raise ValueError(f"unknown sensitive attribute {attribute!r}")

    @property
    def group_names(self) -> tuple[str, str]:
        return (self.group_a, self.group_b)


@dataclass(frozen=True)
class Record:
    """Row view over a cohort; arrays are shared, not copied."""

    id: str
    features: np.ndarray
    total_brain_volume: float
    gender: str
    race: str
    age: float
    label: str


@dataclass(frozen=True)
class Cohort:
    """Immutable columnar table of participant records."""

    ids: np.ndarray
    features: np.ndarray
    feature_names: tuple[str, ...]
    total_brain_volume: np.ndarray
    gender: np.ndarray
    race: np.ndarray
    age: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        for name in ("total_brain_volume", "gender", "race", "age", "labels"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(f"features must be ({n}, d), got {self.features.shape}")
        if self.features.shape[1] != len(self.feature_names):
            raise ValueError(
                f"{len(self.feature_names)} feature names for {self.features.shape[1]} feature columns"
            )
        if len(np.unique(self.ids)) != n:
            raise ValueError("duplicate record ids")
        if n:
            if self.age.min() < 0 or self.age.max() > 130:
                raise ValueError("age out of range [0, 130]")
            if self.total_brain_volume.min() <= 0:
                raise ValueError("total_brain_volume must be positive")
        unknown = set(np.unique(self.labels)) - set(LABELS)
        if unknown:
            raise ValueError(f"unknown diagnosis labels {sorted(unknown)}")
        for arr in (self.ids, self.features, self.total_brain_volume, self.gender, self.race, self.age, self.labels):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def record(self, i: int) -> Record:
        return Record(
            id=str(self.ids[i]),
            features=self.features[i],
            total_brain_volume=float(self.total_brain_volume[i]),
            gender=str(self.gender[i]),
            race=str(self.race[i]),
            age=float(self.age[i]),
            label=str(self.labels[i]),
        )

    def subset(self, indices) -> "Cohort":
        idx = np.asarray(indices, dtype=np.intp)
        return Cohort(
            ids=self.ids[idx].copy(),
            features=self.features[idx].copy(),
            feature_names=self.feature_names,
            total_brain_volume=self.total_brain_volume[idx].copy(),
            gender=self.gender[idx].copy(),
            race=self.race[idx].copy(),
            age=self.age[idx].copy(),
            labels=self.labels[idx].copy(),
        )

    def with_features(self, features: np.ndarray) -> "Cohort":
        """Copy of the cohort with the feature matrix replaced (same shape)."""
        feats = np.array(features, dtype=np.float64)
        if feats.shape != self.features.shape:
            raise ValueError(f"replacement features must have shape {self.features.shape}")
        return Cohort(
            ids=self.ids.copy(),
            features=feats,
            feature_names=self.feature_names,
            total_brain_volume=self.total_brain_volume.copy(),
            gender=self.gender.copy(),
            race=self.race.copy(),
            age=self.age.copy(),
            labels=self.labels.copy(),
        )


@dataclass(frozen=True)
class CsvSchema:
    """Maps canonical cohort fields to CSV column names.

    feature_columns=None selects every column not otherwise mapped.
    """

    id: str = "id"
    gender: str = "gender"
    race: str = "race"
    age: str = "age"
    label: str = "label"
    total_brain_volume: str = "total_brain_volume"
    feature_columns: tuple[str, ...] | None = None
    filter_race: bool = True


def load_csv(path, schema: CsvSchema = CsvSchema()) -> Cohort:
    """Read a cohort table; rows with races outside {white, black} are dropped
    when schema.filter_race is set (drop count logged)."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    mapped = {
        "id": schema.id,
        "gender": schema.gender,
        "race": schema.race,
        "age": schema.age,
        "label": schema.label,
        "total_brain_volume": schema.total_brain_volume,
    }
    for field_name, column in mapped.items():
        if column not in df.columns:
            raise SchemaError(f"missing column {column!r} (mapped to {field_name})")
    if schema.feature_columns is None:
        feature_columns = tuple(c for c in df.columns if c not in set(mapped.values()))
    else:
        feature_columns = tuple(schema.feature_columns)
        for column in feature_columns:
            if column not in df.columns:
                raise SchemaError(f"missing feature column {column!r}")
    if not feature_columns:
        raise SchemaError("no feature columns found")

    race = df[schema.race].str.strip().str.lower()
    if schema.filter_race:
        keep = race.isin(RACES)
        n_dropped = int((~keep).sum())
        if n_dropped:
            logger.warning("dropped %d rows with race outside %s", n_dropped, RACES)
        df = df[keep]
        race = race[keep]

    def numeric(column: str) -> np.ndarray:
        parsed = pd.to_numeric(df[column], errors="coerce")
        bad = parsed.isna()
        if bad.any():
            row = int(np.nonzero(bad.to_numpy())[0][0])
            raise ParseError(f"column {column!r}, row {row}: cannot parse {df[column].iloc[row]!r} as number")
        return parsed.to_numpy(dtype=np.float64)

    gender = df[schema.gender].str.strip().str.lower().to_numpy()
    bad_gender = ~np.isin(gender, GENDERS)
    if bad_gender.any():
        row = int(np.nonzero(bad_gender)[0][0])
        raise ParseError(f"column {schema.gender!r}, row {row}: expected one of {GENDERS}")
    labels = df[schema.label].str.strip().str.upper().to_numpy()
    bad_label = ~np.isin(labels, LABELS)
    if bad_label.any():
        row = int(np.nonzero(bad_label)[0][0])
        raise ParseError(f"column {schema.label!r}, row {row}: expected one of {LABELS}")

    features = np.column_stack([numeric(c) for c in feature_columns]) if len(df) else np.empty((0, len(feature_columns)))
    return Cohort(
        ids=df[schema.id].to_numpy(dtype=str),
        features=features,
        feature_names=feature_columns,
        total_brain_volume=numeric(schema.total_brain_volume),
        gender=gender.astype(str),
        race=race.to_numpy(dtype=str),
        age=numeric(schema.age),
        labels=labels.astype(str),
    )


def to_csv(cohort: Cohort, path) -> None:
    """Write a cohort in the same schema load_csv reads."""
    df = pd.DataFrame({"id": cohort.ids})
    df["gender"] = cohort.gender
    df["race"] = cohort.race
    df["age"] = cohort.age
    df["label"] = cohort.labels
    df["total_brain_volume"] = cohort.total_brain_volume
    for j, name in enumerate(cohort.feature_names):
        df[name] = cohort.features[:, j]
    df.to_csv(path, index=False)


def binarize(cohort: Cohort, spec: SensitiveSpec) -> np.ndarray:
    """Assign every record to group 0 (group_a) or 1 (group_b)."""
    if spec.attribute == "age":
        return (cohort.age > spec.age_threshold).astype(np.int64)
    values = getattr(cohort, spec.attribute)
    out = np.full(len(cohort), -1, dtype=np.int64)
    out[values == spec.group_a] = 0
    out[values == spec.group_b] = 1
    if (out < 0).any():
        bad = values[out < 0][0]
        raise ValueError(f"value {bad!r} matches neither group of {spec.attribute!r}")
    return out


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic cohort generator.

    With every bias knob at zero the subgroups are exchangeable: identical
    feature, label, and volume distributions. subgroup_shift displaces the
    disadvantaged group (male / black / older) along the class-separation
    axis toward the impaired classes; subgroup_label_noise randomizes that
    group's observed labels; prevalence_skew interpolates per-class group
    shares from the class-independent base (0) to REFERENCE_GROUP_SHARES (1);
    proxy_strength makes total brain volume carry the gender and age-group
    indicators.
    """

    n_per_class: tuple[int, int, int] = (2000, 400, 400)
    n_features: int = 20
    class_separation: float = 6.0
    prevalence_skew: Mapping[str, float] = field(default_factory=dict)
    subgroup_shift: Mapping[str, float] = field(default_factory=dict)
    subgroup_label_noise: Mapping[str, float] = field(default_factory=dict)
    proxy_strength: float = 0.0
    seed: int = 0


def _validate_synthetic(config: SyntheticConfig) -> None:
    if any(n <= 0 for n in config.n_per_class) or len(config.n_per_class) != 3:
        raise ValueError("n_per_class must be three positive counts")
    if config.n_features < 2:
        raise ValueError("n_features must be >= 2")
    if config.class_separation < 0:
        raise ValueError("class_separation must be >= 0")
    if not 0.0 <= config.proxy_strength <= 1.0:
        raise ValueError("proxy_strength must lie in [0, 1]")
    for name, bounds in (("prevalence_skew", (0.0, 1.0)), ("subgroup_shift", (0.0, np.inf)),
                         ("subgroup_label_noise", (0.0, 0.5))):
        knobs = getattr(config, name)
        for attribute, value in knobs.items():
            if attribute not in ATTRIBUTES:
                raise ValueError(f"{name}: unknown attribute {attribute!r}")
            if not bounds[0] <= value <= bounds[1]:
                raise ValueError(f"{name}[{attribute!r}]={value} outside {bounds}")


def generate_synthetic(config: SyntheticConfig) -> Cohort:
    """Draw a deterministic synthetic cohort from the configured knobs."""
    _validate_synthetic(config)
    rng = np.random.default_rng(config.seed)
    d = config.n_features
    n = int(sum(config.n_per_class))
    labels = np.repeat(LABELS, config.n_per_class).astype(str)

    axis = rng.standard_normal(d)
    axis /= np.linalg.norm(axis)
    severity = np.array([SEVERITY[c] for c in labels], dtype=np.float64)
    features = rng.standard_normal((n, d)) + np.outer(severity * config.class_separation, axis)

    # subgroup membership: 0 = group_a, 1 = group_b, with exact per-class
    # counts so empirical prevalences match the configured shares up to
    # rounding rather than binomial noise
    groups = {}
    for attribute in ATTRIBUTES:
        shares = REFERENCE_GROUP_SHARES[attribute]
        skew = float(config.prevalence_skew.get(attribute, 0.0))
        assignment = np.ones(n, dtype=np.int64)
        for cls in LABELS:
            idx = np.nonzero(labels == cls)[0]
            share_a = (1 - skew) * shares["base"] + skew * shares[cls]
            n_a = int(round(share_a * len(idx)))
            assignment[rng.permutation(idx)[:n_a]] = 0
        groups[attribute] = assignment

    age = np.where(
        groups["age"] == 0,
        rng.uniform(49.0, DEFAULT_AGE_THRESHOLD, n),
        rng.uniform(DEFAULT_AGE_THRESHOLD + 1e-9, 95.0, n),
    )
    gender = np.asarray(GENDERS)[groups["gender"]].astype(str)
    race = np.asarray(RACES)[groups["race"]].astype(str)

    for attribute in ATTRIBUTES:
        shift = float(config.subgroup_shift.get(attribute, 0.0))
        if shift > 0:
            features[groups[attribute] == 1] += shift * axis

    observed = labels.copy()
    for attribute in ATTRIBUTES:
        noise = float(config.subgroup_label_noise.get(attribute, 0.0))
        if noise > 0:
            flip = (rng.random(n) < noise) & (groups[attribute] == 1)
            for i in np.nonzero(flip)[0]:
                others = [c for c in LABELS if c != observed[i]]
                observed[i] = others[rng.integers(2)]

    rho = config.proxy_strength
    z = (2.0 * groups["gender"] - 1.0) - (2.0 * groups["age"] - 1.0)  # male and younger raise volume
    tbv = _TBV_MEAN + _TBV_STD * (rho * z / np.sqrt(2.0) + np.sqrt(max(0.0, 1.0 - rho**2)) * rng.standard_normal(n))
    tbv = np.maximum(tbv, 1.0)

    ids = np.array([f"syn-{i:06d}" for i in range(n)], dtype=str)
    feature_names = tuple(f"roi_{j:02d}" for j in range(1, d + 1))
    return Cohort(
        ids=ids,
        features=features,
        feature_names=feature_names,
        total_brain_volume=tbv,
        gender=gender,
        race=race,
        age=age,
        labels=observed,
    )


def stratified_kfold(labels, groups=None, *, k: int, seed: int) -> list[np.ndarray]:
    """Partition indices into k folds stratified by (label, group).

    Per-fold stratum counts differ from exact proportionality by at most one
    record. Strata smaller than k are allowed and logged.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    labels = np.asarray(labels)
    if groups is None:
        strata = labels.astype(str)
    else:
        groups = np.asarray(groups)
        if len(groups) != len(labels):
            raise ValueError("labels and groups must have equal length")
        strata = np.array([f"{l}|{g}" for l, g in zip(labels, groups)])

    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for offset, stratum in enumerate(sorted(set(strata))):
        idx = np.nonzero(strata == stratum)[0]
        if len(idx) < k:
            logger.warning("stratum %r has %d records for %d folds", str(stratum), len(idx), k)
        idx = rng.permutation(idx)
        for j, record in enumerate(idx):
            folds[(j + offset) % k].append(int(record))
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


def stratified_split(labels, groups=None, *, held_out_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Single stratified (kept, held_out) index split; strata as in stratified_kfold."""
    if not 0.0 < held_out_fraction < 1.0:
        raise ValueError("held_out_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    if groups is None:
        strata = labels.astype(str)
    else:
        strata = np.array([f"{l}|{g}" for l, g in zip(labels, np.asarray(groups))])
    rng = np.random.default_rng(seed)
    held: list[int] = []
    kept: list[int] = []
    for stratum in sorted(set(strata)):
        idx = rng.permutation(np.nonzero(strata == stratum)[0])
        n_held = int(round(held_out_fraction * len(idx)))
        n_held = min(max(n_held, 1 if len(idx) > 1 else 0), len(idx) - 1)
        held.extend(int(i) for i in idx[:n_held])
        kept.extend(int(i) for i in idx[n_held:])
    return np.array(sorted(kept), dtype=np.intp), np.array(sorted(held), dtype=np.intp)
