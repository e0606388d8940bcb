"""``fairbench`` command line: simulate, german, run --config, pareto --in."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import data as datamod
from .harness import ExperimentConfig, frontier_from_dir, run_experiment
from .multistage import IN_PROCESSORS, POST_PROCESSORS, PRE_PROCESSORS, SCENARIOS

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _comma_list(allowed):
    def parse(text: str) -> tuple[str, ...]:
        if text.strip().lower() in ("", "none"):
            return ()
        items = tuple(t.strip().lower() for t in text.split(",") if t.strip())
        if items == ("all",):
            return tuple(allowed)
        bad = [t for t in items if t not in allowed]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown {bad}; choose from {', '.join(allowed)}")
        return items
    return parse


def _scenarios(text: str) -> tuple[str, ...]:
    return _comma_list(SCENARIOS)(text) or SCENARIOS


def _add_grid_flags(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicates", type=int)
    p.add_argument("--scenario", type=_scenarios, default=SCENARIOS, help="single|or|and|xor|all, comma separated")
    p.add_argument("--pre", type=_comma_list(PRE_PROCESSORS), default=PRE_PROCESSORS)
    p.add_argument("--in", dest="in_", type=_comma_list(IN_PROCESSORS), default=IN_PROCESSORS)
    p.add_argument("--post", type=_comma_list(POST_PROCESSORS), default=POST_PROCESSORS)
    p.add_argument("--di-lambda", type=float)
    p.add_argument("--ro-theta", type=float)
    p.add_argument("--parallelism", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairbench", description="Multistage fairness-processor benchmark.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run the grid on simulated data")
    p.add_argument("--n", type=int, default=5000)
    _add_grid_flags(p)

    p = sub.add_parser("german", help="run the grid on the German credit data")
    p.add_argument("--data", required=True, help="path to german.data")
    p.add_argument("--age-cutoff", type=int, default=25)
    p.add_argument("--age-inclusive", action="store_true", help="treat age == cutoff as young")
    _add_grid_flags(p)

    p = sub.add_parser("run", help="run an experiment described by a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the configured output directory")
    p.add_argument("--parallelism", type=int)

    p = sub.add_parser("pareto", help="print the Pareto frontier of an emitted run")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--scenario", default="single", choices=SCENARIOS)
    return parser


def _hyper_overrides(args, hyper):
    changes = {}
    if args.di_lambda is not None:
        changes["di_lambda"] = args.di_lambda
    if args.ro_theta is not None:
        changes["ro_theta"] = args.ro_theta
    return dataclasses.replace(hyper, **changes) if changes else hyper


def config_from_args(args) -> ExperimentConfig:
    common = dict(
        seed=args.seed, replicates=args.replicates, scenarios=args.scenario,
        pre=args.pre, in_=args.in_, post=args.post, out_dir=args.out, parallelism=args.parallelism,
    )
    base = ExperimentConfig()
    hyper = _hyper_overrides(args, base.hyper)
    if args.command == "simulate":
        sim = datamod.SimConfig(n=args.n, seed=args.seed, replicates=args.replicates or 50)
        return ExperimentConfig(dataset="simulation", simulation=sim, hyper=hyper, **common)
    ger = datamod.GermanConfig(path=args.data, age_cutoff=args.age_cutoff, age_inclusive=args.age_inclusive)
    return ExperimentConfig(dataset="german", german=ger, hyper=hyper, **common)


def _load_config(args) -> ExperimentConfig:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if args.out is not None:
        raw["out_dir"] = args.out
    if args.parallelism is not None:
        raw["parallelism"] = args.parallelism
    cfg = ExperimentConfig.from_dict(raw)
    if cfg.out_dir is None:
        raise ConfigError("config needs out_dir (or pass --out)")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "pareto":
            in_dir = Path(args.in_dir)
            if not (in_dir / f"summary_{args.scenario}.csv").is_file():
                raise datamod.DataError(f"no summary_{args.scenario}.csv in {in_dir}")
            for point in frontier_from_dir(in_dir, args.scenario):
                print(f"{point.pipeline}\t{point.accuracy:.4f}\t{point.separation:.4f}")
            return EXIT_OK
        cfg = _load_config(args) if args.command == "run" else config_from_args(args)
        if cfg.dataset == "german":
            datamod.load_german(cfg.german)  # fail early on bad data
        result = run_experiment(cfg)
        n_failed = sum(r["error"] is not None for r in result.raw)
        print(f"wrote {cfg.out_dir}: {len(result.raw)} pipeline runs, {n_failed} failed")
        return EXIT_OK
    except datamod.DataError as exc:
        print(f"fairbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError, TypeError, OSError) as exc:
        print(f"fairbench: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
