"""Experiment grids, replicate aggregation, Pareto frontiers and report files."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import data as datamod
from .core import split
from .multistage import (
    IN_PROCESSORS,
    METRICS,
    POST_PROCESSORS,
    PRE_PROCESSORS,
    SCENARIOS,
    EvaluationReport,
    Hyperparameters,
    PipelineSpec,
    StageError,
    derive_seed,
    enumerate_grid,
    run_pipeline,
)

log = logging.getLogger(__name__)

REPORT_FIELDS = METRICS + ("sp_abs", "di_quotient")

DESIGN_FLAGS = {
    "positive_rule": "score > threshold (strict)",
    "sp_metric": "literal |dFPR + dFNR| / 2; per-term variant reported as sp_abs",
    "threshold_selection": "max validation balanced accuracy over the processing column; ties to smallest",
    "threshold_grid": "midpoints between distinct validation scores, capped at 512",
    "reweighing": "exact weights (no resampling)",
    "di_interpolation": "(1-lambda)*x + lambda*Q_M(F_a(x)), linear-interpolated quantiles",
    "di_applied_to": "train, validation and test",
    "prejudice_index_ratios": "model-based, frozen per epoch",
    "adversary": "logistic; inputs (prediction, label) for separation",
    "metafair": "group thresholds over a base logistic score; closest-feasible fallback",
    "postprocessor_scores": "upstream threshold recentred to 0.5",
    "postprocessor_fit_split": "validation",
    "platt_labels": "calibrated probability > 0.5",
    "median": "lower median over defined replicate values",
    "lp_metrics_column": "first sensitive column",
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "simulation"
    simulation: datamod.SimConfig = field(default_factory=datamod.SimConfig)
    german: datamod.GermanConfig = field(default_factory=datamod.GermanConfig)
    replicates: int | None = None
    seed: int = 0
    scenarios: tuple[str, ...] = SCENARIOS
    pre: tuple[str, ...] = PRE_PROCESSORS
    in_: tuple[str, ...] = IN_PROCESSORS
    post: tuple[str, ...] = POST_PROCESSORS
    include_baseline: bool = True
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    radar_pairs: tuple[str, ...] = ("adversarial+platt",)
    out_dir: str | None = None
    parallelism: int = 1

    def __post_init__(self):
        if self.dataset not in ("simulation", "german"):
            raise ValueError(f"dataset must be 'simulation' or 'german', got {self.dataset!r}")
        scen = tuple(dict.fromkeys(str(s).lower() for s in self.scenarios))
        if not scen or any(s not in SCENARIOS for s in scen):
            raise ValueError(f"scenarios must be a non-empty subset of {SCENARIOS}")
        object.__setattr__(self, "scenarios", scen)
        for name, allowed in (("pre", PRE_PROCESSORS), ("in_", IN_PROCESSORS), ("post", POST_PROCESSORS)):
            values = tuple(getattr(self, name))
            bad = [v for v in values if v not in allowed]
            if bad:
                raise ValueError(f"unknown {name.rstrip('_')}-processors {bad}; allowed {allowed}")
            object.__setattr__(self, name, values)
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ValueError(f"fractions must be three positive numbers summing to 1, got {fr}")
        object.__setattr__(self, "fractions", fr)
        if self.replicates is not None and self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        object.__setattr__(self, "radar_pairs", tuple(self.radar_pairs))

    @property
    def n_replicates(self) -> int:
        if self.replicates is not None:
            return self.replicates
        return self.simulation.replicates if self.dataset == "simulation" else 1

    def specs(self) -> list[PipelineSpec]:
        """Pipelines of one scenario (lp set per scenario at run time)."""
        specs = [PipelineSpec()] if self.include_baseline else []
        return specs + enumerate_grid(self.pre, self.in_, self.post, ["none"], hyper=self.hyper)

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "dataset": self.dataset,
            "simulation": dataclasses.asdict(self.simulation),
            "german": {"path": str(self.german.path), "age_cutoff": self.german.age_cutoff,
                       "age_inclusive": self.german.age_inclusive,
                       "female_codes": sorted(self.german.female_codes)},
            "replicates": self.replicates,
            "seed": self.seed,
            "scenarios": list(self.scenarios),
            "pre": list(self.pre),
            "in": list(self.in_),
            "post": list(self.post),
            "include_baseline": self.include_baseline,
            "fractions": list(self.fractions),
            "hyper": self.hyper.to_dict(),
            "radar_pairs": list(self.radar_pairs),
        }
        if include_runtime:
            d.update(out_dir=self.out_dir, parallelism=self.parallelism)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {"dataset", "simulation", "german", "replicates", "seed", "scenarios", "pre", "in", "post",
                 "include_baseline", "fractions", "hyper", "radar_pairs", "out_dir", "parallelism"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        kw = {}
        if "simulation" in d:
            sim = dict(d.pop("simulation"))
            bad = sorted(set(sim) - {"n", "seed", "replicates"})
            if bad:
                raise ValueError(f"unknown simulation keys: {bad}")
            kw["simulation"] = datamod.SimConfig(**sim)
        if "german" in d:
            ger = dict(d.pop("german"))
            bad = sorted(set(ger) - {"path", "age_cutoff", "age_inclusive", "female_codes"})
            if bad:
                raise ValueError(f"unknown german keys: {bad}")
            if "female_codes" in ger:
                ger["female_codes"] = frozenset(ger["female_codes"])
            kw["german"] = datamod.GermanConfig(**ger)
        if "hyper" in d:
            kw["hyper"] = Hyperparameters.from_dict(d.pop("hyper"))
        if "in" in d:
            kw["in_"] = tuple(d.pop("in"))
        for key in ("scenarios", "pre", "post", "fractions", "radar_pairs"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**kw, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# running


def _load_dataset(cfg: ExperimentConfig, replicate: int):
    if cfg.dataset == "simulation":
        return datamod.generate_simulation(cfg.simulation, replicate)
    return datamod.load_german(cfg.german)


def _run_unit(cfg: ExperimentConfig, scenario: str, replicate: int) -> list[dict]:
    """All pipelines of one (scenario, replicate); rows are plain dicts."""
    dataset = _load_dataset(cfg, replicate)
    train, val, test = split(dataset, cfg.fractions, seed=derive_seed(cfg.seed, replicate, 0))
    seed = derive_seed(cfg.seed, replicate, 1)
    lp = "none" if scenario == "single" else scenario
    cache: dict = {}
    rows = []
    for index, base in enumerate(cfg.specs()):
        spec = dataclasses.replace(base, lp=lp, seed=seed)
        row = {"scenario": scenario, "spec_index": index, "pipeline": spec.pipeline_id,
               "combination": spec.combination, "replicate": replicate, "error": None}
        try:
            report = run_pipeline(spec, train, val, test, cache)
            row.update({m: report.metric(m) for m in REPORT_FIELDS})
            row["undefined"] = sorted(report.metadata.get("undefined", {}))
        except (StageError, ValueError) as exc:
            log.warning("%s/%s replicate %d failed: %s", scenario, spec.pipeline_id, replicate, exc)
            row.update({m: None for m in REPORT_FIELDS})
            row["error"] = str(exc)
        rows.append(row)
    return rows


def _run_unit_star(args):
    return _run_unit(*args)


def lower_median(values: Iterable[float | None]) -> float | None:
    vals = sorted(v for v in values if v is not None)
    if not vals:
        return None
    return vals[(len(vals) - 1) // 2]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    raw: list[dict]
    reports: dict  # scenario -> list of aggregated EvaluationReport (spec order)

    def report(self, scenario: str, pipeline_id: str) -> EvaluationReport:
        for r in self.reports[scenario]:
            if r.pipeline.pipeline_id == pipeline_id:
                return r
        raise KeyError(pipeline_id)


def aggregate(raw: Sequence[dict], cfg: ExperimentConfig) -> dict:
    """Coordinate-wise lower median of every metric over replicates."""
    specs = cfg.specs()
    out = {}
    for scenario in cfg.scenarios:
        reports = []
        lp = "none" if scenario == "single" else scenario
        for index, spec in enumerate(specs):
            rows = [r for r in raw if r["scenario"] == scenario and r["spec_index"] == index]
            values = {m: lower_median(r[m] for r in rows) for m in REPORT_FIELDS}
            reports.append(EvaluationReport(
                **values,
                scenario=scenario,
                pipeline=dataclasses.replace(spec, lp=lp),
                metadata={"aggregation": "median_over_replicates" if len(rows) > 1 else "single_run",
                          "replicates": len(rows),
                          "failed": sum(r["error"] is not None for r in rows)},
            ))
        out[scenario] = reports
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every scenario x pipeline x replicate; write reports when an output directory is set."""
    units = [(cfg, s, r) for s in cfg.scenarios for r in range(cfg.n_replicates)]
    if cfg.parallelism > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
            chunks = list(pool.map(_run_unit_star, units))
    else:
        chunks = [_run_unit(*u) for u in units]
    raw = [row for chunk in chunks for row in chunk]
    raw.sort(key=lambda r: (cfg.scenarios.index(r["scenario"]), r["spec_index"], r["replicate"]))
    result = ExperimentResult(cfg, raw, aggregate(raw, cfg))
    out_dir = out_dir or cfg.out_dir
    if out_dir is not None:
        emit_reports(result, out_dir)
    return result


# --------------------------------------------------------------------------
# Pareto frontier


@dataclass(frozen=True)
class ParetoPoint:
    accuracy: float
    separation: float
    pipeline: str


def _as_point(item) -> ParetoPoint:
    if isinstance(item, ParetoPoint):
        return item
    if isinstance(item, EvaluationReport):
        return ParetoPoint(item.accuracy, item.sp, item.pipeline.pipeline_id if item.pipeline else "")
    acc, sp, pid = item
    return ParetoPoint(float(acc), float(sp), str(pid))


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    return a.accuracy >= b.accuracy and a.separation <= b.separation and (
        a.accuracy > b.accuracy or a.separation < b.separation
    )


def pareto_frontier(reports) -> list[ParetoPoint]:
    """Non-dominated (high accuracy, low separation) points, by accuracy descending.

    Reports with an undefined accuracy or separation are skipped.
    """
    points = [_as_point(r) for r in reports]
    points = [p for p in points if p.accuracy is not None and p.separation is not None]
    front = [p for p in points if not any(dominates(q, p) for q in points)]
    return sorted(front, key=lambda p: (-p.accuracy, p.separation, p.pipeline))


# --------------------------------------------------------------------------
# report files


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value: str):
    if value == "NA":
        return None
    if value == "":
        return ""
    return float(value)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def processor_axis(cfg: ExperimentConfig) -> list[str]:
    return list(cfg.pre) + list(cfg.in_) + list(cfg.post)


def result_matrix(reports: Sequence[EvaluationReport], cfg: ExperimentConfig, metric: str):
    """Square layout: singletons on the diagonal, pairs off the diagonal, ``""`` for same-stage pairs."""
    axis = processor_axis(cfg)
    stage = {p: 0 for p in cfg.pre} | {p: 1 for p in cfg.in_} | {p: 2 for p in cfg.post}
    by_id = {r.pipeline.pipeline_id: r.metric(metric) for r in reports}
    cells = []
    for a in axis:
        row = []
        for b in axis:
            if a == b:
                row.append(by_id.get(a))
            elif stage[a] == stage[b]:
                row.append("")
            else:
                first, second = sorted((a, b), key=lambda p: stage[p])
                row.append(by_id.get(f"{first}+{second}"))
        cells.append(row)
    return axis, cells


def emit_reports(result: ExperimentResult, out_dir) -> list[Path]:
    """Write heatmap matrices, graphs, replicate tables, radar tables, frontiers and metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    written = []
    for scenario, reports in result.reports.items():
        for metric in METRICS:
            axis, cells = result_matrix(reports, cfg, metric)
            path = out / f"matrix_{metric}_{scenario}.csv"
            _write_csv(path, [""] + axis, [[a] + [_fmt(c) for c in row] for a, row in zip(axis, cells)])
            written.append(path)
            nodes = [{"id": a, "value": cells[i][i]} for i, a in enumerate(axis)]
            edges = [
                {"source": axis[i], "target": axis[j], "value": cells[i][j]}
                for i in range(len(axis)) for j in range(i + 1, len(axis)) if cells[i][j] != ""
            ]
            path = out / f"graph_{metric}_{scenario}.json"
            _write_json(path, {"metric": metric, "scenario": scenario, "nodes": nodes, "edges": edges})
            written.append(path)

        header = ["pipeline", "combination", *REPORT_FIELDS, "replicates", "aggregation"]
        path = out / f"summary_{scenario}.csv"
        _write_csv(path, header, [
            [r.pipeline.pipeline_id, r.pipeline.combination, *(_fmt(r.metric(m)) for m in REPORT_FIELDS),
             r.metadata["replicates"], r.metadata["aggregation"]]
            for r in reports
        ])
        written.append(path)

        raw = [row for row in result.raw if row["scenario"] == scenario]
        path = out / f"replicates_{scenario}.csv"
        _write_csv(path, ["pipeline", "combination", "replicate", *REPORT_FIELDS, "error"], [
            [r["pipeline"], r["combination"], r["replicate"], *(_fmt(r[m]) for m in REPORT_FIELDS),
             r["error"] or ""]
            for r in raw
        ])
        written.append(path)

        by_id = {r.pipeline.pipeline_id: r for r in reports}
        for pair in cfg.radar_pairs:
            members = [p for p in pair.split("+")] + [pair]
            if not all(m in by_id for m in members):
                continue
            path = out / f"radar_{pair.replace('+', '_')}_{scenario}.csv"
            _write_csv(path, ["pipeline", *METRICS], [[m, *(_fmt(by_id[m].metric(k)) for k in METRICS)] for m in members])
            written.append(path)

        path = out / f"pareto_{scenario}.csv"
        _write_csv(path, ["pipeline", "accuracy", "sp"],
                   [[p.pipeline, _fmt(p.accuracy), _fmt(p.separation)] for p in pareto_frontier(reports)])
        written.append(path)

    meta = {
        "config": cfg.to_dict(include_runtime=False),
        "hyperparameters": cfg.hyper.to_dict(),
        "design_flags": DESIGN_FLAGS,
        "replicates": cfg.n_replicates,
        "pipelines": [s.pipeline_id for s in cfg.specs()],
        "seeds": {"experiment": cfg.seed, "split": "derive_seed(seed, replicate, 0)",
                  "pipeline": "derive_seed(seed, replicate, 1)"},
    }
    if cfg.dataset == "german":
        meta["data_characteristics"] = datamod.compare_characteristics(datamod.load_german(cfg.german), "german")
    path = out / "run_metadata.json"
    _write_json(path, meta)
    written.append(path)
    return written


# --------------------------------------------------------------------------
# reading reports back


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for m in REPORT_FIELDS:
            row[m] = _parse(row[m])
        row["replicates"] = int(row["replicates"])
    return rows


def read_matrix(path) -> tuple[list[str], list[list]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0][1:], [[_parse(c) for c in row[1:]] for row in rows[1:]]


def read_pareto(path) -> list[ParetoPoint]:
    with open(path, newline="") as fh:
        return [ParetoPoint(float(r["accuracy"]), float(r["sp"]), r["pipeline"]) for r in csv.DictReader(fh)]


def frontier_from_dir(in_dir, scenario: str = "single") -> list[ParetoPoint]:
    """Recompute the frontier from an emitted ``summary_<scenario>.csv``."""
    rows = read_summary(Path(in_dir) / f"summary_{scenario}.csv")
    return pareto_frontier(
        (r["accuracy"], r["sp"], r["pipeline"]) for r in rows if r["accuracy"] is not None and r["sp"] is not None
    )
