"""Pre-processors: reweighing and disparate-impact removal."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset, DatasetError, UndefinedMetricError


def reweighing_weights(data: Dataset, sensitive_column: str) -> dict[tuple[int, int], float]:
    """Cell weights ``P(A=a) P(Y=y) / P(A=a, Y=y)`` for every (a, y)."""
    a = data.column(sensitive_column)
    y = data.label
    w = data.weights
    total = w.sum()
    out = {}
    for g in (0, 1):
        for v in (0, 1):
            joint = w[(a == g) & (y == v)].sum() / total
            if joint <= 0:
                raise UndefinedMetricError(f"reweighing: empty cell ({sensitive_column}={g}, Y={v})")
            out[(g, v)] = float((w[a == g].sum() / total) * (w[y == v].sum() / total) / joint)
    return out


def reweigh(data: Dataset, sensitive_column: str) -> Dataset:
    """Multiply each row's weight by the weight of its (a, y) cell."""
    cell = reweighing_weights(data, sensitive_column)
    a = data.column(sensitive_column)
    factor = np.empty(data.n)
    for (g, v), value in cell.items():
        factor[(a == g) & (data.label == v)] = value
    return data.replace(weights=data.weights * factor)


def reweigh_resample(data: Dataset, sensitive_column: str, seed: int = 0) -> Dataset:
    """Draw ``n`` rows with replacement, proportionally to the reweighing weights.

    The resampled dataset carries unit weights.
    """
    p = reweigh(data, sensitive_column).weights
    rng = np.random.default_rng(seed)
    idx = rng.choice(data.n, size=data.n, replace=True, p=p / p.sum())
    out = data.subset(idx)
    return out.replace(weights=np.ones(data.n))


# --------------------------------------------------------------------------
# disparate impact remover


@dataclass(frozen=True)
class RepairParams:
    lam: float = 1.0
    columns: Sequence[str] | None = None
    quantile_grid: int = 100
    repair_binary: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.quantile_grid < 2:
            raise ValueError("quantile_grid must be at least 2")


def _inverse_quantile(x: np.ndarray, knots_q: np.ndarray, knots_u: np.ndarray) -> np.ndarray:
    """Invert a non-decreasing piecewise-linear quantile function.

    Values inside a flat stretch of the quantile function (ties) map to the
    middle of the stretch; values outside the support are clamped.
    """
    x = np.clip(x, knots_q[0], knots_q[-1])
    lo = np.searchsorted(knots_q, x, side="left")
    hi = np.searchsorted(knots_q, x, side="right")
    out = np.empty(x.shape)
    tie = lo < hi
    out[tie] = 0.5 * (knots_u[lo[tie]] + knots_u[hi[tie] - 1])
    j = lo[~tie]
    q0, q1 = knots_q[j - 1], knots_q[j]
    u0, u1 = knots_u[j - 1], knots_u[j]
    out[~tie] = u0 + (x[~tie] - q0) * (u1 - u0) / (q1 - q0)
    return out


@dataclass(frozen=True)
class Repairer:
    """Fitted quantile repair for a set of feature columns.

    For a value ``x`` of group ``a`` the repaired value is
    ``(1 - lam) * x + lam * Q_M(F_a(x))`` where ``F_a`` is the group's
    empirical CDF and ``Q_M`` the median of the group quantile functions.
    Within each group's training support this equals interpolating the
    quantile functions ``(1 - lam) Q_a(u) + lam Q_M(u)`` at ``u = F_a(x)``.
    """

    sensitive_column: str
    lam: float
    column_index: tuple[int, ...]
    knots_u: np.ndarray
    group_knots: dict = field(repr=False)  # column index -> (Q_0 knots, Q_1 knots)
    median_knots: dict = field(repr=False)  # column index -> Q_M knots

    def transform_features(self, features: np.ndarray, group: np.ndarray) -> np.ndarray:
        X = np.array(features, dtype=float, copy=True)
        if self.lam == 0.0:
            return X
        group = np.asarray(group)
        for j in self.column_index:
            qm = self.median_knots[j]
            for g in (0, 1):
                m = group == g
                if not m.any():
                    continue
                u = _inverse_quantile(X[m, j], self.group_knots[j][g], self.knots_u)
                X[m, j] = (1.0 - self.lam) * X[m, j] + self.lam * np.interp(u, self.knots_u, qm)
        return X

    def transform(self, data: Dataset) -> Dataset:
        return data.replace(features=self.transform_features(data.features, data.column(self.sensitive_column)))


def _is_binary_column(col: np.ndarray) -> bool:
    return bool(np.all((col == 0) | (col == 1)))


def fit_repairer(train: Dataset, sensitive_column: str, params: RepairParams | None = None) -> Repairer:
    params = params or RepairParams()
    a = train.column(sensitive_column)
    for g in (0, 1):
        if (a == g).sum() < 2:
            raise DatasetError(f"disparate impact remover: group {sensitive_column}={g} has fewer than 2 rows")
    names = list(train.feature_names)
    if params.columns is None:
        index = [j for j in range(len(names)) if params.repair_binary or not _is_binary_column(train.features[:, j])]
    else:
        missing = [c for c in params.columns if c not in names]
        if missing:
            raise DatasetError(f"unknown feature columns {missing}")
        index = [names.index(c) for c in params.columns]
    u = np.linspace(0.0, 1.0, params.quantile_grid)
    group_knots, median_knots = {}, {}
    for j in index:
        per_group = [np.quantile(train.features[a == g, j], u) for g in (0, 1)]
        group_knots[j] = tuple(per_group)
        median_knots[j] = np.median(np.vstack(per_group), axis=0)
    return Repairer(
        sensitive_column=sensitive_column,
        lam=float(params.lam),
        column_index=tuple(index),
        knots_u=u,
        group_knots=group_knots,
        median_knots=median_knots,
    )


def di_remove(train: Dataset, sensitive_column: str, params: RepairParams | None = None) -> tuple[Dataset, Repairer]:
    """Fit a quantile repair on ``train`` and return the repaired data with the repairer."""
    rep = fit_repairer(train, sensitive_column, params)
    return rep.transform(train), rep
