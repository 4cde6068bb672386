import argparse
import logging
import sys
from pathlib import Path

import app_config
from lib.errors import FlowgateError
from lib.logs import setup_logging
from lib.map.graph import read_graph
from lib.map.operators import DEFAULT_MIN_FRACTION, DEFAULT_THRESHOLD
from lib.map.runner import MANIFEST_NAME, RunSettings, run_app

logger = logging.getLogger("flowgate.map")


def run(args) -> int:
    graph = read_graph(args.graph)
    settings = RunSettings(
        threshold=args.threshold,
        min_fraction=args.min_fraction,
        evaluation_type=args.evaluation_type,
        seed=args.seed,
    )
    print(f"Running {len(graph.operators)} operators on {args.input}")
    manifest = run_app(graph, args.input, args.output, settings)
    for record in manifest.operators:
        print(f"  {record.name:<16} {record.status:<8} {record.seconds:.3f}s")
        for path in record.outputs:
            print(f"    wrote {path}")
    if manifest.failed:
        print(f"Run failed: {manifest.failure} (see {Path(args.output) / MANIFEST_NAME})")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowgate-map", description="Run an operator graph on a study")
    parser.add_argument("--app-config", type=Path, default=app_config.DEFAULT_CONFIG_PATH)
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command_name", required=True)

    p = commands.add_parser("run")
    p.add_argument("--graph", required=True, type=Path)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)
    p.add_argument("--min-fraction", type=float, default=DEFAULT_MIN_FRACTION)
    p.add_argument("--evaluation-type", default="MONAI")
    p.add_argument("--seed", type=int)
    p.set_defaults(run=run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    app_config.init_config(args.app_config)
    setup_logging(verbose=args.verbose)
    try:
        return args.run(args)
    except (FlowgateError, OSError) as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
