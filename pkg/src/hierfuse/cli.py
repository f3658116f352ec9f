"""Command-line driver: ``hierfuse <stage> --config cfg.json [...]``.

Exit status is 0 on success, 2 on a configuration error and 3 on a data error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .hierarchy import HierarchyError
from .raster import RasterError

STAGES = ("synth", "build", "gram", "train", "predict", "evaluate", "experiment")
EXIT_CONFIG = 2
EXIT_DATA = 3


def _scenarios(value: str, allow_many: bool) -> list[str]:
    names = list(pipeline.SCENARIOS) if value == "all" else [v.strip() for v in value.split(",") if v.strip()]
    if not names or (len(names) > 1 and not allow_many):
        raise pipeline.ConfigError(f"expected a single scenario, got {value!r}")
    for n in names:
        if n not in pipeline.SCENARIOS:
            raise pipeline.ConfigError(f"unknown scenario {n!r}; choose from {', '.join(pipeline.SCENARIOS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage)
        p.add_argument("--config", required=True, help="JSON pipeline configuration")
        p.add_argument("--work-dir", help="override paths.work_dir")
        p.add_argument("--seed", type=int, help="override the seed (first repetition for experiment)")
        p.add_argument("--jobs", type=int, help="kernel worker threads")
        if stage in ("gram", "train", "predict", "evaluate", "experiment"):
            p.add_argument(
                "--scenario",
                required=stage != "experiment",
                default="all",
                help="one of " + ", ".join(pipeline.SCENARIOS) + ("; 'all' or a comma list for experiment" if stage == "experiment" else ""),
            )
    return parser


def run(args: argparse.Namespace) -> None:
    overrides = {}
    if args.work_dir:
        overrides["work_dir"] = args.work_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    config = pipeline.load_config(args.config, **overrides)
    seed = config.seed
    if args.stage == "synth":
        for path in pipeline.run_synth(config).values():
            print(path)
    elif args.stage == "build":
        result = pipeline.run_build(config)
        print(f"{len(result.ids)} instances; coarse region counts {result.coarse_counts}")
    elif args.stage == "experiment":
        results = pipeline.run_experiment(config, _scenarios(args.scenario, True))
        for name, runs in results.items():
            oa = sum(m.oa for m in runs) / len(runs)
            print(f"{name}: mean OA {100 * oa:.2f} over {len(runs)} runs")
    else:
        scenario = _scenarios(args.scenario, False)[0]
        if args.stage == "gram":
            pipeline.run_gram(config, scenario, seed)
        elif args.stage == "train":
            _, cv = pipeline.run_train(config, scenario, seed)
            print(f"gamma={cv.gamma!r} C={cv.c!r} rho={cv.rho!r} cv_accuracy={cv.accuracy:.4f}")
        elif args.stage == "predict":
            ids, _ = pipeline.run_predict(config, scenario, seed)
            print(f"{len(ids)} predictions")
        else:
            m = pipeline.run_evaluate(config, scenario, seed)
            print(f"OA {m.oa:.4f} AA {m.aa:.4f} Kappa {m.kappa:.4f}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except pipeline.ConfigError as exc:
        print(f"hierfuse: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.DataError, RasterError, HierarchyError) as exc:
        print(f"hierfuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
