"""Post-processors: reject-option relabeling, equalized-odds mixing, group Platt scaling."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .core import UndefinedMetricError
from .inprocess import LogisticParams, Standardizer, fit_logistic_coefficients, sigmoid


def recenter(scores, threshold) -> np.ndarray:
    """Monotone piecewise-linear map sending ``threshold`` to 0.5 and fixing 0 and 1.

    ``threshold`` may be a scalar or a per-row array (group thresholds).
    """
    p = np.clip(np.asarray(scores, dtype=float), 0.0, 1.0)
    t = np.broadcast_to(np.asarray(threshold, dtype=float), p.shape)
    lower = np.where(t > 0, 0.5 * p / np.where(t > 0, t, 1.0), 0.5)
    upper = np.where(t < 1, 0.5 + 0.5 * (p - t) / np.where(t < 1, 1.0 - t, 1.0), 1.0)
    out = np.where(p <= t, lower, upper)
    # keep ``p > t`` equivalent to ``out > 0.5`` even when the shift rounds away
    return np.where(p > t, np.maximum(out, np.nextafter(0.5, 1.0)), out)


# --------------------------------------------------------------------------
# reject option


@dataclass(frozen=True)
class RejectOptionParams:
    theta: float = 0.6

    def __post_init__(self):
        if not 0.5 < self.theta <= 1.0:
            raise ValueError(f"reject-option theta must lie in (0.5, 1], got {self.theta}")


def reject_option(scores, sensitive, params: RejectOptionParams | None = None) -> np.ndarray:
    """Relabel the low-confidence band ``max(p, 1-p) < theta`` by group membership.

    Inside the band unprivileged rows (A=1) get label 1 and privileged rows
    (A=0) get label 0; elsewhere the label is ``p > 0.5``.
    """
    params = params or RejectOptionParams()
    p = np.asarray(scores, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("scores must lie in [0, 1]")
    a = np.asarray(sensitive)
    labels = (p > 0.5).astype(np.int8)
    band = np.maximum(p, 1 - p) < params.theta
    labels[band] = (a[band] == 1).astype(np.int8)
    return labels


# --------------------------------------------------------------------------
# equalized odds


@dataclass(frozen=True)
class EqOddsMix:
    """Per-group probabilities of keeping a base prediction of 1 and of 0."""

    p_keep_pos: tuple[float, float]
    p_keep_neg: tuple[float, float]
    target: tuple[float, float] | None = None  # common (FPR, TPR)
    expected_loss: float | None = None

    def __post_init__(self):
        for v in (*self.p_keep_pos, *self.p_keep_neg):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"mixing probabilities must lie in [0, 1], got {v}")


def group_roc_points(base_predictions, labels, sensitive, weights=None):
    """``(FPR, TPR)`` of the base classifier in each group plus joint cell masses."""
    yhat = np.asarray(base_predictions)
    y = np.asarray(labels)
    a = np.asarray(sensitive)
    w = np.ones(y.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    W = w.sum()
    points, mass = {}, {}
    for g in (0, 1):
        cells = {}
        for v in (0, 1):
            m = (a == g) & (y == v)
            cells[v] = w[m].sum()
            if cells[v] <= 0:
                raise UndefinedMetricError(f"equalized odds: empty cell (A={g}, Y={v})")
        fpr = w[(a == g) & (y == 0) & (yhat == 1)].sum() / cells[0]
        tpr = w[(a == g) & (y == 1) & (yhat == 1)].sum() / cells[1]
        points[g] = (float(fpr), float(tpr))
        mass[g] = (float(cells[0] / W), float(cells[1] / W))
    return points, mass


def _parallelogram(point):
    f, t = point
    # counter-clockwise when the point lies above the diagonal
    return np.array([(0.0, 0.0), (1 - f, 1 - t), (1.0, 1.0), (f, t)])


def _inside(pt, point, tol=1e-12) -> bool:
    s, t = mix_for_point(point, pt)
    return -tol <= s <= 1 + tol and -tol <= t <= 1 + tol and _reproduces(point, pt, s, t, tol=1e-9)


def _reproduces(point, pt, s, t, tol):
    f, r = point
    return abs(s * f + t * (1 - f) - pt[0]) <= tol and abs(s * r + t * (1 - r) - pt[1]) <= tol


def mix_for_point(point, target):
    """Solve ``s * gamma + t * (1 - gamma) = target`` for ``(s, t)``.

    ``s`` is P(new=1 | base=1) and ``t`` is P(new=1 | base=0). For a base point
    on the diagonal the region is the diagonal itself and ``s = t = x``.
    """
    f, r = point
    x, y = target
    if abs(x - f) <= 1e-12 and abs(y - r) <= 1e-12:
        return 1.0, 0.0  # the base classifier already sits at the target
    det = f - r
    if abs(det) < 1e-12:
        return float(x), float(x)
    # [f, 1-f; r, 1-r] [s, t]^T = [x, y]^T
    s = (x * (1 - r) - y * (1 - f)) / det
    t = (f * y - r * x) / det
    return float(s), float(t)


def _segment_intersection(p, p2, q, q2):
    d1, d2 = p2 - p, q2 - q
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-15:
        return None
    diff = q - p
    u = (diff[0] * d2[1] - diff[1] * d2[0]) / den
    v = (diff[0] * d1[1] - diff[1] * d1[0]) / den
    if -1e-12 <= u <= 1 + 1e-12 and -1e-12 <= v <= 1 + 1e-12:
        return p + u * d1
    return None


def equalized_candidates(points) -> list[tuple[float, float]]:
    """Vertices of the intersection of the two groups' achievable regions."""
    polys = [_parallelogram(points[g]) for g in (0, 1)]
    cands = []
    for g in (0, 1):
        other = points[1 - g]
        cands += [tuple(v) for v in polys[g] if _inside(v, other)]
    for i, j in product(range(4), range(4)):
        p, p2 = polys[0][i], polys[0][(i + 1) % 4]
        q, q2 = polys[1][j], polys[1][(j + 1) % 4]
        hit = _segment_intersection(p, p2, q, q2)
        if hit is not None and _inside(hit, points[0], 1e-9) and _inside(hit, points[1], 1e-9):
            cands.append((float(hit[0]), float(hit[1])))
    return cands


def expected_loss(target, mass) -> float:
    """Expected 0/1 loss when both groups operate at ``target = (FPR, TPR)``."""
    x, y = target
    return sum(mass[g][0] * x + mass[g][1] * (1 - y) for g in (0, 1))


def fit_eq_odds(base_predictions, labels, sensitive, weights=None) -> EqOddsMix:
    """Loss-minimising randomised relabeling that equalises group (FPR, TPR).

    The common operating point lies in the intersection of the two groups'
    achievable parallelograms; the loss is linear, so the optimum is one of
    the intersection's vertices. Ties prefer the lowest FPR, then TPR.
    """
    points, mass = group_roc_points(base_predictions, labels, sensitive, weights)
    cands = equalized_candidates(points)
    # (0, 0) lies in every group's region, so the candidate set is never empty
    scored = sorted((round(expected_loss(c, mass), 12), round(c[0], 12), round(c[1], 12), c) for c in cands)
    target = scored[0][3]
    keep_pos, keep_neg = [], []
    for g in (0, 1):
        s, t = mix_for_point(points[g], target)
        keep_pos.append(float(np.clip(s, 0, 1)))
        keep_neg.append(float(np.clip(1 - t, 0, 1)))
    return EqOddsMix(tuple(keep_pos), tuple(keep_neg), (float(target[0]), float(target[1])), scored[0][0])


def eq_odds_probabilities(mix: EqOddsMix, base_predictions, sensitive) -> np.ndarray:
    """Per-row probability that the derived classifier outputs 1."""
    yhat = np.asarray(base_predictions)
    a = np.asarray(sensitive).astype(np.intp)
    keep_pos = np.asarray(mix.p_keep_pos)[a]
    keep_neg = np.asarray(mix.p_keep_neg)[a]
    return np.where(yhat == 1, keep_pos, 1 - keep_neg)


def apply_eq_odds(mix: EqOddsMix, base_predictions, sensitive, seed: int = 0) -> np.ndarray:
    prob = eq_odds_probabilities(mix, base_predictions, sensitive)
    u = np.random.default_rng(seed).random(prob.shape[0])
    return (u < prob).astype(np.int8)


# --------------------------------------------------------------------------
# group Platt scaling


@dataclass(frozen=True)
class GroupPlatt:
    """Per-group ``(slope, intercept)`` of ``sigmoid(slope * score + intercept)``."""

    coefficients: tuple[tuple[float, float], tuple[float, float]]
    pooled_fallback: tuple[bool, bool] = (False, False)

    def __post_init__(self):
        if not np.all(np.isfinite(np.asarray(self.coefficients))):
            raise ValueError("Platt coefficients must be finite")


def _fit_platt_1d(scores, labels, weights, params):
    X = np.asarray(scores, dtype=float).reshape(-1, 1)
    std = Standardizer.fit(X)
    theta, _ = fit_logistic_coefficients(std.design(X), labels, weights, params)
    slope = theta[1] / std.scale[0]
    return float(slope), float(theta[0] - slope * std.mean[0])


def fit_group_platt(scores, labels, sensitive, weights=None, params: LogisticParams | None = None) -> GroupPlatt:
    """One-dimensional logistic regression of Y on the score within each group.

    A group lacking one of the label values uses the pooled fit instead.
    """
    params = params or LogisticParams(max_epochs=2000)
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    a = np.asarray(sensitive)
    w = np.ones(s.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if np.all(y == y[0]):
        raise ValueError("Platt scaling needs both label values")
    pooled = None
    coefs, fallback = [], []
    for g in (0, 1):
        m = a == g
        if np.unique(y[m]).size < 2:
            if pooled is None:
                pooled = _fit_platt_1d(s, y, w, params)
            coefs.append(pooled)
            fallback.append(True)
        else:
            coefs.append(_fit_platt_1d(s[m], y[m], w[m], params))
            fallback.append(False)
    return GroupPlatt(tuple(coefs), tuple(fallback))


def apply_group_platt(gp: GroupPlatt, scores, sensitive) -> np.ndarray:
    a = np.asarray(sensitive).astype(np.intp)
    coef = np.asarray(gp.coefficients)
    return sigmoid(coef[a, 0] * np.asarray(scores, dtype=float) + coef[a, 1])
