"""In-processors built on a small full-batch gradient-descent engine.

Every trainer standardises the features with training-set statistics, fits
a logistic model on ``[1, standardised features]`` and returns a
:class:`~fairbench.core.ScoreModel` whose scorer applies the same
standardisation. Losses are normalised by the total row weight.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, ScoreModel, UndefinedMetricError

log = logging.getLogger(__name__)

_EPS = 1e-12


class ConvergenceError(RuntimeError):
    pass


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def _softplus(z):
    """``log(1 + exp(z))`` without overflow."""
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass(frozen=True)
class LogisticParams:
    l2: float = 1e-4
    learning_rate: float = 0.1
    max_epochs: int = 500
    tol: float = 1e-7
    theta: np.ndarray | None = None  # initial coefficients, intercept first

    def __post_init__(self):
        if self.l2 < 0 or self.learning_rate <= 0 or self.tol <= 0 or self.max_epochs < 1:
            raise ValueError(f"invalid logistic parameters {self}")


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def design(self, X: np.ndarray) -> np.ndarray:
        """Standardised features with a leading intercept column."""
        Z = (np.asarray(X, dtype=float) - self.mean) / self.scale
        return np.hstack([np.ones((Z.shape[0], 1)), Z])


@dataclass(frozen=True)
class LinearScorer:
    """``sigmoid(theta . [1, standardise(x)])``; picklable, unlike a closure."""

    theta: np.ndarray
    standardizer: Standardizer

    def logit(self, X):
        return self.standardizer.design(X) @ self.theta

    def __call__(self, X):
        return sigmoid(self.logit(X))

    def original_scale(self) -> tuple[float, np.ndarray]:
        """Intercept and slopes expressed on the unstandardised features."""
        slopes = self.theta[1:] / self.standardizer.scale
        return float(self.theta[0] - slopes @ self.standardizer.mean), slopes


def _check_finite(data: Dataset):
    if not np.all(np.isfinite(data.features)):
        raise ValueError("features contain non-finite values")


# --------------------------------------------------------------------------
# objectives


def logistic_loss_grad(theta, Z, y, w, l2):
    """Weighted mean negative log-likelihood plus ``l2/2 |theta|^2`` and its gradient."""
    W = w.sum()
    z = Z @ theta
    nll = (w * (_softplus(z) - y * z)).sum() / W
    p = sigmoid(z)
    grad = Z.T @ (w * (p - y)) / W + l2 * theta
    return nll + 0.5 * l2 * theta @ theta, grad


def prejudice_ratios(p, group, w) -> np.ndarray:
    """``log(P(y|a) / P(y))`` with model-based probabilities; shape (2 groups, 2 labels)."""
    W = w.sum()
    p_all = (w * p).sum() / W
    out = np.zeros((2, 2))
    for g in (0, 1):
        m = group == g
        Wg = w[m].sum()
        if Wg <= 0:
            raise UndefinedMetricError(f"prejudice index: empty group {g}")
        pg = (w[m] * p[m]).sum() / Wg
        out[g, 1] = np.log(max(pg, _EPS) / max(p_all, _EPS))
        out[g, 0] = np.log(max(1 - pg, _EPS) / max(1 - p_all, _EPS))
    return out


def prejudice_index(p, group, w, ratios=None) -> float:
    """Weighted mean of ``sum_y f(y|x_i) log(P(y|a_i)/P(y))``.

    ``ratios`` can be supplied to evaluate the frozen-ratio objective.
    """
    r = prejudice_ratios(p, group, w) if ratios is None else ratios
    per_row = p * r[group, 1] + (1 - p) * r[group, 0]
    return float((w * per_row).sum() / w.sum())


def pi_loss_grad(theta, Z, y, w, group, l2, eta, ratios):
    """Regularised loss with the prejudice ratios held fixed, and its gradient."""
    loss, grad = logistic_loss_grad(theta, Z, y, w, l2)
    if eta == 0:
        return loss, grad
    p = sigmoid(Z @ theta)
    c = ratios[group, 1] - ratios[group, 0]
    pi = prejudice_index(p, group, w, ratios)
    grad_pi = Z.T @ (w * c * p * (1 - p)) / w.sum()
    return loss + eta * pi, grad + eta * grad_pi


# --------------------------------------------------------------------------
# engine


@dataclass
class _Descent:
    """Full-batch gradient descent; the step is halved whenever the loss rises."""

    learning_rate: float
    max_halvings: int = 60
    halvings: int = 0

    def step(self, theta, direction, loss_fn: Callable, current: float):
        while True:
            cand = theta - self.learning_rate * direction
            value = loss_fn(cand)
            if not np.isfinite(value):
                if self.halvings >= self.max_halvings:
                    raise ConvergenceError("loss diverged to a non-finite value")
            elif value <= current:
                return cand, value
            if self.halvings >= self.max_halvings:
                return theta, current
            self.learning_rate *= 0.5
            self.halvings += 1


def _initial_theta(params: LogisticParams, d: int) -> np.ndarray:
    if params.theta is None:
        return np.zeros(d + 1)
    theta = np.asarray(params.theta, dtype=float).copy()
    if theta.shape != (d + 1,):
        raise ValueError(f"initial theta must have shape ({d + 1},)")
    return theta


def _minimise(objective, theta, params: LogisticParams, history=None):
    engine = _Descent(params.learning_rate)
    loss, grad = objective(theta)
    epochs = 0
    for epochs in range(1, params.max_epochs + 1):
        new_theta, new_loss = engine.step(theta, grad, lambda t: objective(t)[0], loss)
        if history is not None:
            history.append({"theta": theta.copy(), "loss": loss, "learning_rate": engine.learning_rate})
        done = abs(loss - new_loss) < params.tol
        theta, loss = new_theta, new_loss
        if done:
            break
        loss, grad = objective(theta)
    return theta, {"epochs": epochs, "final_loss": float(loss), "halvings": engine.halvings}


def fit_logistic_coefficients(Z, y, w, params: LogisticParams, history=None):
    """Minimise the weighted logistic loss on a prepared design matrix."""
    theta = _initial_theta(params, Z.shape[1] - 1)
    y = np.asarray(y, dtype=float)
    return _minimise(lambda t: logistic_loss_grad(t, Z, y, w, params.l2), theta, params, history)


def train_logistic(train: Dataset, params: LogisticParams | None = None, history=None) -> ScoreModel:
    """Baseline weighted logistic regression."""
    params = params or LogisticParams()
    _check_finite(train)
    std = Standardizer.fit(train.features)
    Z = std.design(train.features)
    theta, info = fit_logistic_coefficients(Z, train.label, train.weights, params, history)
    return ScoreModel(LinearScorer(theta, std), 0.5, {"trainer": "logistic", **info})


def train_pi_regularized(
    train: Dataset, sensitive_column: str, params: LogisticParams | None = None, eta: float = 1.0, history=None
) -> ScoreModel:
    """Logistic regression with a prejudice-index penalty of strength ``eta``.

    The log-ratio terms of the penalty are refreshed from the current model at
    the start of every epoch and held constant while stepping.
    """
    params = params or LogisticParams()
    if eta < 0:
        raise ValueError("eta must be non-negative")
    _check_finite(train)
    std = Standardizer.fit(train.features)
    Z = std.design(train.features)
    y = train.label.astype(float)
    w = train.weights
    group = train.column(sensitive_column).astype(np.intp)
    for g in (0, 1):
        if w[group == g].sum() <= 0:
            raise UndefinedMetricError(f"empty group {sensitive_column}={g}")

    theta = _initial_theta(params, Z.shape[1] - 1)
    engine = _Descent(params.learning_rate)
    epochs = 0
    for epochs in range(1, params.max_epochs + 1):
        ratios = prejudice_ratios(sigmoid(Z @ theta), group, w)

        def objective(t, ratios=ratios):
            return pi_loss_grad(t, Z, y, w, group, params.l2, eta, ratios)

        loss, grad = objective(theta)
        new_theta, new_loss = engine.step(theta, grad, lambda t: objective(t)[0], loss)
        if history is not None:
            history.append({"theta": theta.copy(), "loss": loss, "learning_rate": engine.learning_rate})
        theta = new_theta
        if abs(loss - new_loss) < params.tol:
            break
    pi = prejudice_index(sigmoid(Z @ theta), group, w)
    meta = {"trainer": "pireg", "eta": eta, "epochs": epochs, "prejudice_index": pi, "ratio_estimator": "model-based"}
    return ScoreModel(LinearScorer(theta, std), 0.5, meta)


# --------------------------------------------------------------------------
# adversarial debiasing

ADVERSARY_INPUTS = ("prediction_only", "prediction_and_label")


@dataclass(frozen=True)
class AdversaryParams:
    alpha: float = 0.1
    decay: bool = True
    projection: bool = True
    adversary_inputs: str = "prediction_and_label"
    learning_rate: float = 0.1
    adversary_theta: np.ndarray | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.adversary_inputs not in ADVERSARY_INPUTS:
            raise ValueError(f"adversary_inputs must be one of {ADVERSARY_INPUTS}")


def adversary_design(p, y, mode: str) -> np.ndarray:
    cols = [np.ones_like(p), p]
    if mode == "prediction_and_label":
        cols.append(np.asarray(y, dtype=float))
    return np.column_stack(cols)


def adversary_loss_grads(theta, u, Z, y, a, w, mode):
    """Adversary cross-entropy and its gradients w.r.t. the adversary and classifier weights."""
    W = w.sum()
    p = sigmoid(Z @ theta)
    H = adversary_design(p, y, mode)
    s = H @ u
    loss = (w * (_softplus(s) - a * s)).sum() / W
    r = w * (sigmoid(s) - a) / W
    grad_u = H.T @ r
    grad_theta = Z.T @ (r * u[1] * p * (1 - p))
    return loss, grad_u, grad_theta


def projection(v, onto):
    """Projection of ``v`` on ``onto``; zero when ``onto`` is (numerically) null."""
    nrm2 = onto @ onto
    if np.sqrt(nrm2) < 1e-12:
        return np.zeros_like(v)
    return (v @ onto) / nrm2 * onto


def adversarial_direction(grad_l, grad_adv, alpha, use_projection=True):
    """Classifier update direction ``g - proj_{g_A} g - alpha g_A``."""
    d = grad_l - alpha * grad_adv
    if use_projection:
        d = d - projection(grad_l, grad_adv)
    return d


def train_adversarial(
    train: Dataset,
    sensitive_column: str,
    clf: LogisticParams | None = None,
    adv: AdversaryParams | None = None,
    seed: int = 0,
    history: list | None = None,
) -> ScoreModel:
    """Logistic classifier trained against a logistic adversary predicting A.

    Each epoch the adversary takes one gradient step on its cross-entropy,
    then the classifier moves along ``grad L - proj grad L - alpha_t grad L_A``.
    Whenever that direction is a descent direction for the classifier loss the
    same halving rule as :func:`train_logistic` guards the step, so with the
    adversary switched off the trajectory matches the baseline exactly.
    """
    clf = clf or LogisticParams()
    adv = adv or AdversaryParams()
    _check_finite(train)
    std = Standardizer.fit(train.features)
    Z = std.design(train.features)
    y = train.label.astype(float)
    a = train.column(sensitive_column).astype(float)
    w = train.weights
    rng = np.random.default_rng(seed)
    n_adv = 3 if adv.adversary_inputs == "prediction_and_label" else 2
    if adv.adversary_theta is None:
        u = rng.normal(scale=0.1, size=n_adv)
    else:
        u = np.asarray(adv.adversary_theta, dtype=float).copy()
        if u.shape != (n_adv,):
            raise ValueError(f"adversary_theta must have shape ({n_adv},)")

    theta = _initial_theta(clf, Z.shape[1] - 1)
    engine = _Descent(clf.learning_rate)

    def clf_loss(t):
        return logistic_loss_grad(t, Z, y, w, clf.l2)[0]

    loss, grad_l = logistic_loss_grad(theta, Z, y, w, clf.l2)
    epochs = 0
    for epochs in range(1, clf.max_epochs + 1):
        _, grad_u, _ = adversary_loss_grads(theta, u, Z, y, a, w, adv.adversary_inputs)
        u = u - adv.learning_rate * grad_u
        adv_loss, _, grad_adv = adversary_loss_grads(theta, u, Z, y, a, w, adv.adversary_inputs)
        alpha_t = adv.alpha / np.sqrt(epochs) if adv.decay else adv.alpha
        d = adversarial_direction(grad_l, grad_adv, alpha_t, adv.projection)
        if d @ grad_l > 0:
            new_theta, new_loss = engine.step(theta, d, clf_loss, loss)
        else:
            new_theta = theta - engine.learning_rate * d
            new_loss = clf_loss(new_theta)
            if not np.isfinite(new_loss):
                raise ConvergenceError("adversarial training diverged")
        if history is not None:
            history.append({
                "theta": theta.copy(), "grad_loss": grad_l.copy(), "grad_adversary": grad_adv.copy(),
                "alpha": alpha_t, "learning_rate": engine.learning_rate, "step": theta - new_theta,
                "loss": loss, "adversary_loss": adv_loss,
            })
        done = abs(loss - new_loss) < clf.tol and alpha_t == 0 and not adv.projection
        theta, loss = new_theta, new_loss
        if done:
            break
        loss, grad_l = logistic_loss_grad(theta, Z, y, w, clf.l2)
    meta = {
        "trainer": "adversarial", "epochs": epochs, "adversary_inputs": adv.adversary_inputs,
        "alpha": adv.alpha, "alpha_decay": "1/sqrt(t)" if adv.decay else "none", "projection": adv.projection,
    }
    return ScoreModel(LinearScorer(theta, std), 0.5, meta)


# --------------------------------------------------------------------------
# meta-fair constrained classification

METAFAIR_METRICS = ("independence", "equal_opportunity", "separation", "sufficiency")


@dataclass(frozen=True)
class MetaFairParams:
    metric: str = "separation"
    tau_rule: float = 0.8
    group_threshold_grid: int | Sequence | None = 64
    base: LogisticParams = field(default_factory=LogisticParams)

    def __post_init__(self):
        if self.metric not in METAFAIR_METRICS:
            raise ValueError(f"metric must be one of {METAFAIR_METRICS}")
        if not 0.0 < self.tau_rule <= 1.0:
            raise ValueError("tau_rule must lie in (0, 1]")


def group_quantities(pred0, pred1, y0, y1, w0, w1, metric):
    """Group performance quantities ``(q_0, q_1)`` for every constraint of ``metric``.

    ``pred_a`` holds 0/1 predictions with shape (thresholds_a, rows_a). The
    returned pairs broadcast to (thresholds_0, thresholds_1); a quantity whose
    conditioning event is empty is NaN.
    """
    def cond_mean(event, cond, w):
        den = (cond * w).sum(axis=-1)
        num = (event * cond * w).sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)

    def q(pred, y, w, which):
        if which == "positive":  # P(pred=1 | A=a)
            return cond_mean(pred, np.ones_like(pred), w)
        if which == "fpr":  # P(pred=1 | A=a, Y=0)
            return cond_mean(pred, np.broadcast_to(y == 0, pred.shape), w)
        if which == "fnr":  # P(pred=0 | A=a, Y=1)
            return cond_mean(1 - pred, np.broadcast_to(y == 1, pred.shape), w)
        return cond_mean(np.broadcast_to(y == 1, pred.shape), pred, w)  # P(Y=1 | A=a, pred=1)

    names = {
        "independence": ["positive"],
        "equal_opportunity": ["fpr"],
        "separation": ["fpr", "fnr"],
        "sufficiency": ["precision"],
    }[metric]
    return [(q(pred0, y0, w0, k)[:, None], q(pred1, y1, w1, k)[None, :]) for k in names]


def quotient_grid(q0, q1) -> np.ndarray:
    """Elementwise ``min/max`` over broadcast grids; NaN quantities give 0, 0/0 gives 1."""
    q0, q1 = np.broadcast_arrays(q0, q1)
    lo, hi = np.minimum(q0, q1), np.maximum(q0, q1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(hi > 0, lo / np.where(hi > 0, hi, 1), 1.0)
    return np.where(np.isnan(q0) | np.isnan(q1), 0.0, out)


def _group_grid(scores, spec, g):
    if spec is None or isinstance(spec, (int, np.integer)):
        k = 64 if spec is None else int(spec)
        return np.unique(np.quantile(scores, np.linspace(0, 1, k)))
    spec = list(spec)
    if len(spec) == 2 and all(np.ndim(s) == 1 for s in spec):
        return np.asarray(spec[g], dtype=float)
    return np.asarray(spec, dtype=float)


def solve_group_thresholds(scores, label, group, weights, metric, tau_rule, grid0, grid1):
    """Exhaustive search for the error-minimising group threshold pair under the tau-rule.

    Returns ``(tau_0, tau_1, info)``; when no pair is feasible, the pair with
    the largest worst-case quotient is returned and ``info["feasible"]`` is False.
    Ties go to the first pair in (tau_0, tau_1) lexicographic order.
    """
    grid0 = np.asarray(grid0, dtype=float)
    grid1 = np.asarray(grid1, dtype=float)
    m0, m1 = group == 0, group == 1
    s0, s1 = scores[m0], scores[m1]
    y0, y1 = label[m0].astype(float), label[m1].astype(float)
    w0, w1 = weights[m0], weights[m1]
    if metric in ("equal_opportunity", "separation"):
        for g, yy, ww in ((0, y0, w0), (1, y1, w1)):
            for v in (0, 1) if metric == "separation" else (0,):
                if ww[yy == v].sum() <= 0:
                    raise UndefinedMetricError(f"meta-fair {metric}: empty cell (A={g}, Y={v})")
    elif w0.sum() <= 0 or w1.sum() <= 0:
        raise UndefinedMetricError("meta-fair: empty sensitive group")
    pred0 = (s0[None, :] > grid0[:, None]).astype(float)
    pred1 = (s1[None, :] > grid1[:, None]).astype(float)
    W = weights.sum()
    err0 = ((pred0 != y0) * w0).sum(axis=1) / W
    err1 = ((pred1 != y1) * w1).sum(axis=1) / W
    error = err0[:, None] + err1[None, :]
    ratios = [quotient_grid(q0, q1) for q0, q1 in group_quantities(pred0, pred1, y0, y1, w0, w1, metric)]
    worst = np.minimum.reduce(ratios)
    feasible = worst >= tau_rule
    if feasible.any():
        masked = np.where(feasible, error, np.inf)
        i, j = np.unravel_index(int(np.argmin(masked)), error.shape)
    else:
        best = worst.max()
        masked = np.where(worst >= best, error, np.inf)
        i, j = np.unravel_index(int(np.argmin(masked)), error.shape)
    info = {"feasible": bool(feasible.any()), "quotient": float(worst[i, j]), "train_error": float(error[i, j])}
    return float(grid0[i]), float(grid1[j]), info


def train_metafair(
    train: Dataset, sensitive_column: str, params: MetaFairParams | None = None, base: ScoreModel | None = None
) -> ScoreModel:
    """Minimise training error subject to ``min_a q_a / max_a q_a >= tau`` via group thresholds."""
    params = params or MetaFairParams()
    base = base or train_logistic(train, params.base)
    scores = base.score(train)
    group = train.column(sensitive_column)
    grid0 = _group_grid(scores[group == 0], params.group_threshold_grid, 0)
    grid1 = _group_grid(scores[group == 1], params.group_threshold_grid, 1)
    t0, t1, info = solve_group_thresholds(
        scores, train.label, group, train.weights, params.metric, params.tau_rule, grid0, grid1
    )
    if not info["feasible"]:
        log.info("meta-fair constraint infeasible on the grid; closest pair has quotient %.4f", info["quotient"])
    meta = {"trainer": "metafair", "metric": params.metric, "tau_rule": params.tau_rule, **info}
    return ScoreModel(base.scorer, 0.5, meta, group_thresholds=(t0, t1), group_column=sensitive_column)
