"""Fairness processors and their multistage compositions for binary credit scoring."""
from .core import (
    Dataset,
    DatasetError,
    GroupConfusion,
    ScoreModel,
    UndefinedMetricError,
    accuracy,
    balanced_accuracy,
    confusion,
    ind_metric,
    select_threshold,
    sf_metric,
    sp_metric,
    sp_metric_abs,
    split,
)
from .data import DataError, GermanConfig, SimConfig, generate_simulation, load_german
from .harness import ExperimentConfig, ParetoPoint, emit_reports, pareto_frontier, run_experiment
from .logic import LogicalProcessor, apply_lp, parse_lp
from .multistage import EvaluationReport, Hyperparameters, PipelineSpec, enumerate_grid, run_pipeline

__version__ = "0.1.0"
