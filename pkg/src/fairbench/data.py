"""Synthetic credit data and the UCI Statlog German credit loader."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset

log = logging.getLogger(__name__)

# Values reported for the two benchmark datasets (sample size, features,
# default rate, A1, A2, OR, AND, XOR rates). Kept for side-by-side reports.
REPORTED_CHARACTERISTICS = {
    "simulation": {"n": 5000, "features": 6, "default_rate": 0.17, "a1": 0.50, "a2": 0.50,
                   "or": 0.75, "and": 0.25, "xor": 0.50},
    "german": {"n": 1000, "features": 61, "default_rate": 0.30, "a1": 0.15, "a2": 0.19,
               "or": 0.39, "and": 0.11, "xor": 0.29},
}


class DataError(ValueError):
    """Malformed or missing input data."""


@dataclass(frozen=True)
class SimConfig:
    n: int = 5000
    seed: int = 0
    replicates: int = 50

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("simulation needs n >= 10")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


def replicate_rng(seed: int, replicate_index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, replicate, stream) key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate_index, stream])))


def generate_simulation(cfg: SimConfig, replicate_index: int = 0) -> Dataset:
    """Draw one replicate of the two-attribute synthetic credit dataset.

    ``a1, a2 ~ Bernoulli(1/2)``, noisy measurements ``v_i ~ N(a_i, 1)``,
    unrelated ``e_i ~ N(1/2, 1)``, ``v`` their mean, and two independent noisy
    copies ``u, w ~ N(v, 1)``. The label is ``w > 0`` and the features are
    ``(a1, a2, u)``.
    """
    rng = replicate_rng(cfg.seed, replicate_index)
    n = cfg.n
    a = rng.integers(0, 2, size=(n, 2))
    v = rng.normal(loc=a.astype(float), scale=1.0)
    eps = rng.normal(loc=0.5, scale=1.0, size=(n, 2))
    mean = (v.sum(axis=1) + eps.sum(axis=1)) / 4.0
    u = rng.normal(loc=mean, scale=1.0)
    w = rng.normal(loc=mean, scale=1.0)
    y = (w > 0).astype(np.int8)
    X = np.column_stack([a[:, 0], a[:, 1], u]).astype(float)
    return Dataset(X, y, {"a1": a[:, 0], "a2": a[:, 1]}, feature_names=["a1", "a2", "u"])


# --------------------------------------------------------------------------
# German credit

# (name, kind, levels) in file order; categorical levels follow the UCI codebook
GERMAN_ATTRIBUTES = [
    ("checking_status", "cat", ["A11", "A12", "A13", "A14"]),
    ("duration", "num", None),
    ("credit_history", "cat", ["A30", "A31", "A32", "A33", "A34"]),
    ("purpose", "cat", ["A40", "A41", "A42", "A43", "A44", "A45", "A46", "A47", "A48", "A49", "A410"]),
    ("credit_amount", "num", None),
    ("savings", "cat", ["A61", "A62", "A63", "A64", "A65"]),
    ("employment", "cat", ["A71", "A72", "A73", "A74", "A75"]),
    ("installment_rate", "num", None),
    ("personal_status_sex", "cat", ["A91", "A92", "A93", "A94", "A95"]),
    ("other_debtors", "cat", ["A101", "A102", "A103"]),
    ("residence_since", "num", None),
    ("property", "cat", ["A121", "A122", "A123", "A124"]),
    ("age", "num", None),
    ("other_installment_plans", "cat", ["A141", "A142", "A143"]),
    ("housing", "cat", ["A151", "A152", "A153"]),
    ("existing_credits", "num", None),
    ("job", "cat", ["A171", "A172", "A173", "A174"]),
    ("people_liable", "num", None),
    ("telephone", "cat", ["A191", "A192"]),
    ("foreign_worker", "cat", ["A201", "A202"]),
]

# personal_status_sex codes describing women
FEMALE_CODES = frozenset({"A92", "A95"})


@dataclass(frozen=True)
class GermanConfig:
    """Loader options.

    ``age_inclusive=False`` marks applicants strictly younger than
    ``age_cutoff`` as unprivileged (A1 = 1); set it to True for ``age <= cutoff``.
    """

    path: str | Path = "data/german.data"
    age_cutoff: int = 25
    age_inclusive: bool = False
    female_codes: frozenset = FEMALE_CODES

    def __post_init__(self):
        if self.age_cutoff <= 0:
            raise ValueError("age_cutoff must be positive")


def german_feature_names() -> list[str]:
    names = []
    for name, kind, levels in GERMAN_ATTRIBUTES:
        if kind == "num":
            names.append(name)
        else:
            names += [f"{name}={lv}" for lv in levels]
    return names


def load_german(cfg: GermanConfig | None = None) -> Dataset:
    """Parse ``german.data``: 20 attributes plus the outcome (1 good, 2 bad) per line.

    Label is 1 for good credit. Sensitive columns: ``age`` (young applicants)
    and ``sex`` (women). Categorical attributes are one-hot encoded over every
    codebook level; numeric attributes pass through.
    """
    cfg = cfg or GermanConfig()
    path = Path(cfg.path)
    if not path.is_file():
        raise DataError(f"German credit file not found: {path}")
    rows, labels, ages, sexes = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 21:
                raise DataError(f"{path}:{lineno}: expected 21 fields, got {len(fields)}")
            row = []
            for (name, kind, levels), value in zip(GERMAN_ATTRIBUTES, fields):
                if kind == "num":
                    try:
                        row.append(float(value))
                    except ValueError:
                        raise DataError(f"{path}:{lineno}: non-numeric {name} {value!r}") from None
                else:
                    if value not in levels:
                        raise DataError(f"{path}:{lineno}: unknown {name} code {value!r}")
                    row += [1.0 if value == lv else 0.0 for lv in levels]
            outcome = fields[20]
            if outcome not in ("1", "2"):
                raise DataError(f"{path}:{lineno}: outcome must be 1 or 2, got {outcome!r}")
            rows.append(row)
            labels.append(1 if outcome == "1" else 0)
            ages.append(float(fields[12]))
            sexes.append(fields[8])
    if not rows:
        raise DataError(f"{path}: no rows")
    age = np.asarray(ages)
    young = age <= cfg.age_cutoff if cfg.age_inclusive else age < cfg.age_cutoff
    female = np.array([s in cfg.female_codes for s in sexes])
    data = Dataset(
        np.asarray(rows),
        np.asarray(labels),
        {"age": young.astype(int), "sex": female.astype(int)},
        feature_names=german_feature_names(),
    )
    expected = REPORTED_CHARACTERISTICS["german"]["features"]
    if data.features.shape[1] != expected:
        log.info("German data: %d encoded features (reported: %d)", data.features.shape[1], expected)
    return data


def characteristics(data: Dataset, columns=None) -> dict:
    """Sample size, feature count, default and sensitive-attribute rates."""
    from .logic import lp_rates

    columns = list(columns or data.sensitive_names[:2])
    w = data.weights / data.weights.sum()
    out = {
        "n": data.n,
        "features": data.features.shape[1],
        "default_rate": float(w[data.label == 0].sum()),
        "a1": float(w[data.column(columns[0]) == 1].sum()),
    }
    if len(columns) > 1:
        out["a2"] = float(w[data.column(columns[1]) == 1].sum())
        out["or"], out["and"], out["xor"] = lp_rates(data, columns)
    return out


def compare_characteristics(data: Dataset, reported: str, columns=None) -> dict:
    """Measured characteristics next to the reported ones, key by key."""
    measured = characteristics(data, columns)
    ref = REPORTED_CHARACTERISTICS[reported]
    return {k: {"measured": measured[k], "reported": ref.get(k)} for k in measured}
