"""Datasets, score models, confusion statistics and fairness deviation metrics.

All probabilities are weighted empirical probabilities: each row counts with
its weight, so a reweighed dataset can be evaluated without resampling.
Positive predictions are defined by the strict inequality ``score > tau``.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when a dataset violates its structural invariants."""


class UndefinedMetricError(ValueError):
    """Raised when a metric conditions on an empty (zero-weight) cell."""


def _as_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DatasetError(f"{name} must be one-dimensional")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise DatasetError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int8)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, binary label, named binary sensitive columns and row weights.

    ``sensitive`` preserves insertion order; the first column is the primary
    sensitive attribute (A1).
    """

    features: np.ndarray
    label: np.ndarray
    sensitive: Mapping[str, np.ndarray]
    weights: np.ndarray | None = None
    feature_names: Sequence[str] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        n = X.shape[0]
        if n < 1:
            raise DatasetError("dataset must have at least one row")
        y = _as_binary(self.label, "label")
        if y.shape[0] != n:
            raise DatasetError(f"label has {y.shape[0]} entries, expected {n}")
        if not self.sensitive:
            raise DatasetError("at least one sensitive column is required")
        sens = {}
        for key, col in self.sensitive.items():
            col = _as_binary(col, f"sensitive column {key!r}")
            if col.shape[0] != n:
                raise DatasetError(f"sensitive column {key!r} has {col.shape[0]} entries, expected {n}")
            sens[str(key)] = col
        if self.weights is None:
            w = np.ones(n)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (n,):
                raise DatasetError(f"weights must have shape ({n},)")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise DatasetError("weights must be finite and non-negative")
            if not np.any(w > 0):
                raise DatasetError("at least one weight must be positive")
        names = self.feature_names
        if names is None:
            names = [f"x{j}" for j in range(X.shape[1])]
        names = tuple(str(s) for s in names)
        if len(names) != X.shape[1]:
            raise DatasetError(f"{len(names)} feature names for {X.shape[1]} columns")
        for arr in (X, y, w, *sens.values()):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "label", y)
        object.__setattr__(self, "sensitive", sens)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def sensitive_names(self) -> list[str]:
        return list(self.sensitive)

    def column(self, name: str) -> np.ndarray:
        """Return the sensitive column ``name``."""
        try:
            return self.sensitive[name]
        except KeyError:
            raise KeyError(f"unknown sensitive column {name!r}; have {list(self.sensitive)}") from None

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            features=self.features[index],
            label=self.label[index],
            sensitive={k: v[index] for k, v in self.sensitive.items()},
            weights=self.weights[index],
            feature_names=self.feature_names,
        )

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)

    def with_sensitive(self, name: str, values) -> "Dataset":
        sens = dict(self.sensitive)
        sens[name] = values
        return self.replace(sensitive=sens)

    def to_csv(self, path) -> None:
        """Write features, ``sens_``-prefixed sensitive columns, label and weight."""
        header = list(self.feature_names) + [f"sens_{k}" for k in self.sensitive] + ["label", "weight"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(header)
            for i in range(self.n):
                row = [repr(float(v)) for v in self.features[i]]
                row += [int(col[i]) for col in self.sensitive.values()]
                row += [int(self.label[i]), repr(float(self.weights[i]))]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-2:] != ["label", "weight"]:
            raise DatasetError("CSV must end with label and weight columns")
        sens_idx = [j for j, h in enumerate(header) if h.startswith("sens_")]
        feat_idx = [j for j, h in enumerate(header[:-2]) if j not in sens_idx]
        table = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(
            features=table[:, feat_idx],
            label=table[:, -2].astype(int),
            sensitive={header[j][5:]: table[:, j].astype(int) for j in sens_idx},
            weights=table[:, -1],
            feature_names=[header[j] for j in feat_idx],
        )


@dataclass(frozen=True)
class ScoreModel:
    """A scorer mapping a feature matrix to scores in [0, 1], plus a decision threshold.

    When ``group_thresholds`` is set the threshold depends on the value of the
    sensitive column ``group_column``: ``(tau_0, tau_1)``.
    """

    scorer: Callable[[np.ndarray], np.ndarray]
    threshold: float = 0.5
    metadata: dict = field(default_factory=dict)
    group_thresholds: tuple[float, float] | None = None
    group_column: str | None = None

    def score(self, data_or_features) -> np.ndarray:
        X = data_or_features.features if isinstance(data_or_features, Dataset) else data_or_features
        return np.asarray(self.scorer(np.asarray(X, dtype=float)), dtype=float)

    def thresholds_for(self, group: np.ndarray | None) -> np.ndarray | float:
        if self.group_thresholds is None:
            return self.threshold
        if group is None:
            raise ValueError("model has group thresholds; the group column is required")
        t0, t1 = self.group_thresholds
        return np.where(np.asarray(group) == 1, t1, t0)

    def predict(self, data: Dataset) -> np.ndarray:
        group = data.column(self.group_column) if self.group_thresholds is not None else None
        return (self.score(data) > self.thresholds_for(group)).astype(np.int8)

    def with_threshold(self, tau: float) -> "ScoreModel":
        return dataclasses.replace(self, threshold=float(tau), group_thresholds=None, group_column=None)


def predictions_of(data: Dataset, model) -> np.ndarray:
    """Predicted labels from a :class:`ScoreModel` or an explicit 0/1 vector."""
    if isinstance(model, ScoreModel):
        return model.predict(data)
    pred = _as_binary(model, "predictions")
    if pred.shape[0] != data.n:
        raise ValueError(f"{pred.shape[0]} predictions for {data.n} rows")
    return pred


# --------------------------------------------------------------------------
# confusion statistics

_RATES = {
    "tpr": ("tp", ("tp", "fn")),
    "fnr": ("fn", ("tp", "fn")),
    "tnr": ("tn", ("tn", "fp")),
    "fpr": ("fp", ("tn", "fp")),
}


@dataclass(frozen=True)
class GroupConfusion:
    """Weighted confusion counts per sensitive group (keys 0 and 1)."""

    column: str
    tp: dict
    fp: dict
    tn: dict
    fn: dict

    def rate(self, name: str, group: int) -> float | None:
        """Conditional rate ``name`` in ``group``; ``None`` when its denominator is zero."""
        num, den = _RATES[name.lower()]
        d = sum(getattr(self, k)[group] for k in den)
        if d <= 0:
            return None
        return getattr(self, num)[group] / d

    def tpr(self, group):
        return self.rate("tpr", group)

    def tnr(self, group):
        return self.rate("tnr", group)

    def fpr(self, group):
        return self.rate("fpr", group)

    def fnr(self, group):
        return self.rate("fnr", group)

    def require(self, name: str, group: int) -> float:
        value = self.rate(name, group)
        if value is None:
            cond = "Y=1" if name.lower() in ("tpr", "fnr") else "Y=0"
            raise UndefinedMetricError(
                f"{name.upper()} undefined for {self.column}={group}: no rows with {cond} in that group"
            )
        return value

    def to_dict(self) -> dict:
        out = {}
        for g in (0, 1):
            out[str(g)] = {k: float(getattr(self, k)[g]) for k in ("tp", "fp", "tn", "fn")}
            out[str(g)].update({r: self.rate(r, g) for r in _RATES})
        return out


def confusion(data: Dataset, model, sensitive_column: str) -> GroupConfusion:
    a = data.column(sensitive_column)
    y = data.label
    pred = predictions_of(data, model)
    w = data.weights
    cells = {"tp": {}, "fp": {}, "tn": {}, "fn": {}}
    for g in (0, 1):
        m = a == g
        cells["tp"][g] = float(w[m & (pred == 1) & (y == 1)].sum())
        cells["fp"][g] = float(w[m & (pred == 1) & (y == 0)].sum())
        cells["tn"][g] = float(w[m & (pred == 0) & (y == 0)].sum())
        cells["fn"][g] = float(w[m & (pred == 0) & (y == 1)].sum())
    return GroupConfusion(column=sensitive_column, **cells)


def _group_mean(values: np.ndarray, w: np.ndarray, mask: np.ndarray, what: str) -> float:
    total = w[mask].sum()
    if total <= 0:
        raise UndefinedMetricError(f"empty group: no rows with {what}")
    return float((w[mask] * values[mask]).sum() / total)


def accuracy(data: Dataset, model) -> float:
    pred = predictions_of(data, model)
    w = data.weights
    return float((w * (pred == data.label)).sum() / w.sum())


def balanced_accuracy(data: Dataset, model, sensitive_column: str) -> float:
    """Mean over the two sensitive groups of the within-group accuracy."""
    a = data.column(sensitive_column)
    correct = (predictions_of(data, model) == data.label).astype(float)
    accs = [_group_mean(correct, data.weights, a == g, f"{sensitive_column}={g}") for g in (0, 1)]
    return 0.5 * (accs[0] + accs[1])


def positive_rates(data: Dataset, model, sensitive_column: str) -> tuple[float, float]:
    a = data.column(sensitive_column)
    pred = predictions_of(data, model).astype(float)
    return tuple(_group_mean(pred, data.weights, a == g, f"{sensitive_column}={g}") for g in (0, 1))


def ind_metric(data: Dataset, model, sensitive_column: str) -> float:
    """Absolute difference of positive-prediction rates between the groups."""
    p0, p1 = positive_rates(data, model, sensitive_column)
    return abs(p1 - p0)


def disparate_impact_quotient(data: Dataset, model, sensitive_column: str) -> float | None:
    """``min/max`` of the two positive-prediction rates (the 80% rule quotient)."""
    p0, p1 = positive_rates(data, model, sensitive_column)
    hi = max(p0, p1)
    return None if hi == 0 else min(p0, p1) / hi


def _error_rate_gaps(data, model, sensitive_column):
    cm = model if isinstance(model, GroupConfusion) else confusion(data, model, sensitive_column)
    d_fpr = cm.require("fpr", 1) - cm.require("fpr", 0)
    d_fnr = cm.require("fnr", 1) - cm.require("fnr", 0)
    return d_fpr, d_fnr


def sp_metric(data: Dataset, model, sensitive_column: str) -> float:
    """Separation deviation ``|dFPR + dFNR| / 2``.

    The absolute value wraps the sum, so opposite-sign gaps in FPR and FNR
    cancel. :func:`sp_metric_abs` gives the per-term variant.
    """
    d_fpr, d_fnr = _error_rate_gaps(data, model, sensitive_column)
    return 0.5 * abs(d_fpr + d_fnr)


def sp_metric_abs(data: Dataset, model, sensitive_column: str) -> float:
    """Separation deviation ``(|dFPR| + |dFNR|) / 2``."""
    d_fpr, d_fnr = _error_rate_gaps(data, model, sensitive_column)
    return 0.5 * (abs(d_fpr) + abs(d_fnr))


def sf_metric(data: Dataset, model, sensitive_column: str) -> float:
    """Absolute difference of precision ``P(Y=1 | pred=1, A=a)`` between groups."""
    a = data.column(sensitive_column)
    pred = predictions_of(data, model)
    y = data.label.astype(float)
    prec = [
        _group_mean(y, data.weights, (a == g) & (pred == 1), f"positive predictions in {sensitive_column}={g}")
        for g in (0, 1)
    ]
    return abs(prec[1] - prec[0])


# --------------------------------------------------------------------------
# splitting


def _largest_remainder(total: int, fractions: Sequence[float]) -> np.ndarray:
    raw = np.asarray(fractions, dtype=float) * total
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for j in order[: total - counts.sum()]:
        counts[j] += 1
    return counts


def strata_of(data: Dataset) -> np.ndarray:
    """Integer stratum code combining the label with every sensitive column."""
    code = data.label.astype(np.int64)
    for col in data.sensitive.values():
        code = code * 2 + col
    return code


def split(data: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified, seeded train/validation/test partition.

    Strata are the combinations of label and all sensitive columns. Part sizes
    follow the fractions exactly (largest remainder); each stratum with at
    least three rows contributes at least one training row.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = data.n
    targets = _largest_remainder(n, fractions)
    if n < 3 or np.any(targets < 1):
        raise ValueError(f"{n} rows cannot give every part at least one row with fractions {fractions}")

    strata = strata_of(data)
    keys = np.unique(strata)
    sizes = np.array([(strata == k).sum() for k in keys])
    raw = sizes[:, None] * np.asarray(fractions)[None, :]
    alloc = np.floor(raw).astype(int)
    force = (sizes >= 3) & (alloc[:, 0] == 0)
    alloc[force, 0] = 1
    left = sizes - alloc.sum(axis=1)
    deficit = targets - alloc.sum(axis=0)
    rem = raw - alloc
    # hand leftover rows to the (stratum, part) cells with the largest remainders
    order = sorted(
        ((-rem[s, p], s, p) for s in range(len(keys)) for p in range(3)),
    )
    while left.sum() > 0:
        moved = False
        for _, s, p in order:
            if left[s] > 0 and deficit[p] > 0:
                alloc[s, p] += 1
                left[s] -= 1
                deficit[p] -= 1
                moved = True
        if not moved:
            for s in np.nonzero(left)[0]:
                p = int(np.argmax(deficit))
                alloc[s, p] += left[s]
                deficit[p] -= left[s]
                left[s] = 0

    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for s, k in enumerate(keys):
        rows = rng.permutation(np.flatnonzero(strata == k))
        bounds = np.cumsum(alloc[s])
        for p, chunk in enumerate(np.split(rows, bounds[:2])):
            parts[p].append(chunk)
    return tuple(data.subset(np.sort(np.concatenate(p))) for p in parts)


# --------------------------------------------------------------------------
# thresholds

MAX_GRID = 512


def default_threshold_grid(scores: np.ndarray, cap: int = MAX_GRID) -> np.ndarray:
    """Candidate thresholds for a strict ``score > tau`` rule.

    Every threshold in ``[s_k, s_{k+1})`` induces the same partition, so each
    partition is represented by the midpoint between consecutive distinct
    scores. A point below the smallest score (all positive) and the largest
    score (all negative) close the grid.
    """
    s = np.unique(np.clip(np.asarray(scores, dtype=float), 0.0, 1.0))
    grid = [(s[:-1] + s[1:]) / 2.0, s[-1:]]
    if s[0] > 0:
        grid.insert(0, s[:1] / 2.0)
    grid = np.unique(np.concatenate(grid))
    if grid.size > cap:
        grid = grid[np.unique(np.round(np.linspace(0, grid.size - 1, cap)).astype(int))]
    return grid


def balanced_accuracy_curve(scores, label, group, weights, grid) -> np.ndarray:
    """Balanced accuracy at every threshold in ``grid`` (vectorised)."""
    grid = np.asarray(grid, dtype=float)
    out = np.zeros(grid.size)
    for g in (0, 1):
        m = group == g
        wg = weights[m]
        total = wg.sum()
        if total <= 0:
            raise UndefinedMetricError(f"empty group {g} in threshold selection")
        sg, yg = scores[m], label[m]
        order = np.argsort(sg, kind="stable")
        sg, yg, wg = sg[order], yg[order], wg[order]
        # rows with score <= tau are predicted negative
        neg_correct = np.concatenate([[0.0], np.cumsum(wg * (yg == 0))])
        pos_correct_tail = (wg * (yg == 1)).sum() - np.concatenate([[0.0], np.cumsum(wg * (yg == 1))])
        k = np.searchsorted(sg, grid, side="right")
        out += (neg_correct[k] + pos_correct_tail[k]) / total
    return out / 2.0


def select_threshold(score, validation: Dataset, sensitive_column: str, grid=None) -> float:
    """Threshold maximising validation balanced accuracy; ties go to the smallest."""
    scores = score.score(validation) if isinstance(score, ScoreModel) else np.asarray(score(validation.features))
    grid = default_threshold_grid(scores) if grid is None else np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    values = balanced_accuracy_curve(
        scores, validation.label, validation.column(sensitive_column), validation.weights, grid
    )
    # float noise from the cumulative sums must not break the smallest-tau tie rule
    best = np.flatnonzero(values >= values.max() - 1e-12)[0]
    return float(grid[best])
