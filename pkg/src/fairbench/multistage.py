"""Pipelines composing a logical processor with pre-, in- and post-processors.

A pipeline runs in a fixed order:

1. logical processor (adds the combined sensitive column to every split)
2. pre-processor fitted on train (reweighing or disparate-impact repair)
3. in-processor, or the baseline logistic regression, trained on train
4. decision threshold chosen on validation by balanced accuracy
5. post-processor fitted on validation predictions
6. metrics on test, against the evaluation column

Test labels are read only in step 6.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import inprocess, postprocess, preprocess
from .core import (
    Dataset,
    GroupConfusion,
    UndefinedMetricError,
    accuracy,
    balanced_accuracy,
    confusion,
    disparate_impact_quotient,
    ind_metric,
    select_threshold,
    sf_metric,
    sp_metric,
    sp_metric_abs,
)
from .logic import parse_lp

log = logging.getLogger(__name__)

PRE_PROCESSORS = ("reweigh", "diremover")
IN_PROCESSORS = ("adversarial", "pireg", "metafair")
POST_PROCESSORS = ("reject", "eqodds", "platt")
BASELINE = "logistic"
SCENARIOS = ("single", "or", "and", "xor")
STAGE_ORDER = ("lp", "pre", "in", "threshold", "post", "evaluate")
METRICS = ("accuracy", "balanced_accuracy", "ind", "sp", "sf")


@dataclass(frozen=True)
class Hyperparameters:
    """Fixed hyper-parameters shared by every processor in a run."""

    l2: float = 1e-4
    learning_rate: float = 0.1
    max_epochs: int = 500
    tol: float = 1e-7
    adv_alpha: float = 0.1
    adv_decay: bool = True
    adv_projection: bool = True
    adv_inputs: str = "prediction_and_label"
    adv_learning_rate: float = 0.1
    pi_eta: float = 1.0
    mf_metric: str = "separation"
    mf_tau: float = 0.8
    mf_grid: int = 64
    di_lambda: float = 1.0
    di_grid: int = 100
    ro_theta: float = 0.6

    def __post_init__(self):
        # build every processor's parameter object once so bad values fail before any fitting
        self.adversary(), self.metafair(), self.repair(), self.reject()

    def logistic(self) -> inprocess.LogisticParams:
        return inprocess.LogisticParams(self.l2, self.learning_rate, self.max_epochs, self.tol)

    def adversary(self) -> inprocess.AdversaryParams:
        return inprocess.AdversaryParams(
            alpha=self.adv_alpha, decay=self.adv_decay, projection=self.adv_projection,
            adversary_inputs=self.adv_inputs, learning_rate=self.adv_learning_rate,
        )

    def metafair(self) -> inprocess.MetaFairParams:
        return inprocess.MetaFairParams(self.mf_metric, self.mf_tau, self.mf_grid, self.logistic())

    def repair(self) -> preprocess.RepairParams:
        return preprocess.RepairParams(lam=self.di_lambda, quantile_grid=self.di_grid)

    def reject(self) -> postprocess.RejectOptionParams:
        return postprocess.RejectOptionParams(self.ro_theta)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict | None) -> "Hyperparameters":
        values = dict(values or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown hyper-parameters: {unknown}")
        return cls(**values)


@dataclass(frozen=True)
class PipelineSpec:
    lp: str = "none"
    pre: str | None = None
    in_: str = BASELINE
    post: str | None = None
    seed: int = 0
    eval_column: str | None = None
    lp_columns: tuple[str, ...] | None = None
    hyper: Hyperparameters = field(default_factory=Hyperparameters)

    def __post_init__(self):
        lp = "none" if self.lp in (None, "single") else str(self.lp).lower()
        if lp not in ("none", "or", "and", "xor"):
            raise ValueError(f"unknown logical processor {self.lp!r}")
        object.__setattr__(self, "lp", lp)
        if self.pre is not None and self.pre not in PRE_PROCESSORS:
            raise ValueError(f"unknown pre-processor {self.pre!r}")
        if self.in_ != BASELINE and self.in_ not in IN_PROCESSORS:
            raise ValueError(f"unknown in-processor {self.in_!r}")
        if self.post is not None and self.post not in POST_PROCESSORS:
            raise ValueError(f"unknown post-processor {self.post!r}")
        if self.lp_columns is not None:
            object.__setattr__(self, "lp_columns", tuple(self.lp_columns))

    @property
    def scenario(self) -> str:
        return "single" if self.lp == "none" else self.lp

    @property
    def processors(self) -> tuple[str, ...]:
        """Fairness processors in stage order (the baseline trainer is not one)."""
        names = [self.pre, None if self.in_ == BASELINE else self.in_, self.post]
        return tuple(p for p in names if p is not None)

    @property
    def pipeline_id(self) -> str:
        return "+".join(self.processors) or "baseline"

    @property
    def combination(self) -> str:
        has_in = self.in_ != BASELINE
        stages = (self.pre is not None, has_in, self.post is not None)
        return {
            (False, False, False): "baseline",
            (True, True, False): "PI",
            (True, False, True): "PP",
            (False, True, True): "IP",
            (True, True, True): "PIP",
        }.get(stages, "single")

    def to_dict(self) -> dict:
        return {
            "lp": self.lp, "pre": self.pre, "in": self.in_, "post": self.post, "seed": self.seed,
            "eval_column": self.eval_column,
            "lp_columns": list(self.lp_columns) if self.lp_columns else None,
            "hyper": self.hyper.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineSpec":
        d = dict(d)
        unknown = sorted(set(d) - {"lp", "pre", "in", "post", "seed", "eval_column", "lp_columns", "hyper"})
        if unknown:
            raise ValueError(f"unknown pipeline keys: {unknown}")
        return cls(
            lp=d.get("lp", "none"), pre=d.get("pre"), in_=d.get("in", BASELINE), post=d.get("post"),
            seed=int(d.get("seed", 0)), eval_column=d.get("eval_column"), lp_columns=d.get("lp_columns"),
            hyper=Hyperparameters.from_dict(d.get("hyper")),
        )


@dataclass
class EvaluationReport:
    accuracy: float | None
    balanced_accuracy: float | None
    ind: float | None
    sp: float | None
    sf: float | None
    sp_abs: float | None = None
    di_quotient: float | None = None
    group_confusion: GroupConfusion | None = None
    scenario: str = "single"
    pipeline: PipelineSpec | None = None
    metadata: dict = field(default_factory=dict)

    def metric(self, name: str) -> float | None:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline.pipeline_id if self.pipeline else None,
            "scenario": self.scenario,
            **{m: getattr(self, m) for m in METRICS + ("sp_abs", "di_quotient")},
            "group_confusion": self.group_confusion.to_dict() if self.group_confusion else None,
            "metadata": self.metadata,
        }


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


def evaluate(data: Dataset, predictions, column: str, scenario="single", pipeline=None, metadata=None):
    """Every metric of ``predictions`` on ``data``; undefined metrics become ``None``."""
    undefined = {}

    def safe(name, fn):
        try:
            return fn(data, predictions, column)
        except UndefinedMetricError as exc:
            undefined[name] = str(exc)
            return None

    report = EvaluationReport(
        accuracy=accuracy(data, predictions),
        balanced_accuracy=safe("balanced_accuracy", balanced_accuracy),
        ind=safe("ind", ind_metric),
        sp=safe("sp", sp_metric),
        sf=safe("sf", sf_metric),
        sp_abs=safe("sp_abs", sp_metric_abs),
        di_quotient=safe("di_quotient", disparate_impact_quotient),
        group_confusion=confusion(data, predictions, column),
        scenario=scenario,
        pipeline=pipeline,
        metadata=dict(metadata or {}),
    )
    if undefined:
        report.metadata["undefined"] = undefined
    return report


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass(frozen=True)
class _Unlabeled:
    """Features and sensitive columns of a split whose labels must stay unread."""

    features: np.ndarray
    sensitive: dict


def _stage(name: str):
    log.debug("stage %s", name)
    return name


def _lp_stage(spec: PipelineSpec, train: Dataset, val: Dataset, test: Dataset):
    eval_column = spec.eval_column or train.sensitive_names[0]
    test_view = _Unlabeled(test.features, dict(test.sensitive))
    lp = parse_lp(spec.lp)
    if lp is None:
        return train, val, test_view, eval_column, eval_column
    columns = list(spec.lp_columns or train.sensitive_names[:2])
    if len(columns) != 2:
        raise StageError(f"logical processor {lp.kind} needs two sensitive columns, got {columns}")
    add = lambda d: d.with_sensitive(lp.name, lp.evaluate([d.column(c) for c in columns]))  # noqa: E731
    test_view.sensitive[lp.name] = lp.evaluate([test_view.sensitive[c] for c in columns])
    return add(train), add(val), test_view, lp.name, eval_column


def _pre_stage(spec, train, val, test_view, column):
    if spec.pre is None:
        return train, val, test_view, {}
    if spec.pre == "reweigh":
        cells = preprocess.reweighing_weights(train, column)
        return preprocess.reweigh(train, column), val, test_view, {"cell_weights": {f"{a},{y}": w for (a, y), w in cells.items()}}
    repairer = preprocess.fit_repairer(train, column, spec.hyper.repair())
    test_view = _Unlabeled(repairer.transform_features(test_view.features, test_view.sensitive[column]), test_view.sensitive)
    meta = {"lambda": repairer.lam, "repaired_columns": [train.feature_names[j] for j in repairer.column_index],
            "interpolation": "(1-lambda)*x + lambda*Q_M(F_a(x))", "applied_to": ["train", "validation", "test"]}
    return repairer.transform(train), repairer.transform(val), test_view, meta


def _in_stage(spec, train, column):
    h = spec.hyper
    if spec.in_ == BASELINE:
        return inprocess.train_logistic(train, h.logistic())
    if spec.in_ == "adversarial":
        return inprocess.train_adversarial(train, column, h.logistic(), h.adversary(), seed=derive_seed(spec.seed, 1))
    if spec.in_ == "pireg":
        return inprocess.train_pi_regularized(train, column, h.logistic(), eta=h.pi_eta)
    return inprocess.train_metafair(train, column, h.metafair())


def _threshold_stage(model, val, column):
    if model.group_thresholds is not None:
        return model, {"rule": "group thresholds from the constrained solver", "thresholds": list(model.group_thresholds)}
    tau = select_threshold(model, val, column)
    return model.with_threshold(tau), {"rule": "max validation balanced accuracy", "threshold": tau}


def _row_thresholds(model, sensitive):
    if model.group_thresholds is None:
        return model.threshold
    return model.thresholds_for(sensitive[model.group_column])


def _post_stage(spec, model, val, test_view, column):
    test_scores = model.score(test_view.features)
    test_p = postprocess.recenter(test_scores, _row_thresholds(model, test_view.sensitive))
    test_group = test_view.sensitive[column]
    if spec.post is None:
        return (test_p > 0.5).astype(np.int8), {}
    meta = {"score_recentering": "threshold mapped to 0.5, piecewise linear", "fit_split": "validation"}
    if spec.post == "reject":
        params = spec.hyper.reject()
        meta.update(theta=params.theta, fit_split=None)
        return postprocess.reject_option(test_p, test_group, params), meta
    val_p = postprocess.recenter(model.score(val), _row_thresholds(model, val.sensitive))
    if spec.post == "eqodds":
        mix = postprocess.fit_eq_odds((val_p > 0.5).astype(int), val.label, val.column(column), val.weights)
        meta.update(p_keep_pos=list(mix.p_keep_pos), p_keep_neg=list(mix.p_keep_neg), target=list(mix.target))
        labels = postprocess.apply_eq_odds(mix, (test_p > 0.5).astype(int), test_group, seed=derive_seed(spec.seed, 2))
        return labels, meta
    gp = postprocess.fit_group_platt(val_p, val.label, val.column(column), val.weights)
    meta.update(coefficients=[list(c) for c in gp.coefficients], pooled_fallback=list(gp.pooled_fallback))
    return (postprocess.apply_group_platt(gp, test_p, test_group) > 0.5).astype(np.int8), meta


def _guard(stage, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:
        raise StageError(f"stage {stage!r} failed: {exc}") from exc


def run_pipeline(spec: PipelineSpec, train: Dataset, val: Dataset, test: Dataset, cache: dict | None = None):
    """Run one pipeline end to end and evaluate it on ``test``.

    ``cache`` may be shared between pipelines that use the same splits, seed and
    hyper-parameters; fitted stages common to several pipelines are then reused.
    """
    cache = {} if cache is None else cache
    meta = {"stage_order": list(STAGE_ORDER), "stages": {}}

    _stage("lp")
    key = ("lp", spec.lp, spec.lp_columns, spec.eval_column)
    if key not in cache:
        cache[key] = _guard("lp", _lp_stage, spec, train, val, test)
    tr, va, te, column, eval_column = cache[key]
    meta["stages"]["lp"] = {"kind": spec.lp, "processing_column": column, "eval_column": eval_column}

    _stage("pre")
    key = ("pre", spec.lp, spec.lp_columns, spec.eval_column, spec.pre, spec.hyper)
    if key not in cache:
        cache[key] = _guard("pre", _pre_stage, spec, tr, va, te, column)
    tr, va, te, pre_meta = cache[key]
    meta["stages"]["pre"] = {"processor": spec.pre, **pre_meta}

    key = ("in", spec.lp, spec.lp_columns, spec.eval_column, spec.pre, spec.in_, spec.seed, spec.hyper)
    if key not in cache:
        _stage("in")
        model = _guard("in", _in_stage, spec, tr, column)
        _stage("threshold")
        cache[key] = _guard("threshold", _threshold_stage, model, va, column)
    model, thr_meta = cache[key]
    meta["stages"]["in"] = {"processor": spec.in_, **{k: v for k, v in model.metadata.items() if k != "history"}}
    meta["stages"]["threshold"] = thr_meta

    _stage("post")
    labels, post_meta = _guard("post", _post_stage, spec, model, va, te, column)
    meta["stages"]["post"] = {"processor": spec.post, **post_meta}

    _stage("evaluate")
    # first and only read of the test labels
    scored = test.replace(sensitive={**test.sensitive, **te.sensitive})
    return evaluate(scored, labels, eval_column, spec.scenario, spec, meta)


def enumerate_grid(pres: Sequence[str], ins: Sequence[str], posts: Sequence[str], lps: Sequence[str], **spec_kwargs):
    """Singletons plus every PI, PP and IP pair, for each logical-processor scenario."""
    specs = []
    for lp in lps:
        lp = "none" if lp in (None, "single", "none") else lp
        make = lambda **kw: PipelineSpec(lp=lp, **kw, **spec_kwargs)  # noqa: E731
        specs += [make(pre=p) for p in pres]
        specs += [make(in_=i) for i in ins]
        specs += [make(post=q) for q in posts]
        specs += [make(pre=p, in_=i) for p in pres for i in ins]
        specs += [make(pre=p, post=q) for p in pres for q in posts]
        specs += [make(in_=i, post=q) for i in ins for q in posts]
    return specs
