import argparse
import logging
import signal
import sys
import threading
from pathlib import Path

import app_config
from lib.errors import FlowgateError
from lib.logs import setup_logging
from lib.sim.modality import cli_modality_send
from lib.sim.scenario import read_scenarios, run_scenario_e2e
from lib.sim.sinks import AckMode, run_mllp_sink, run_store_sink
from lib.sim.synthetic import BrightBlock, SeriesSpec, SyntheticStudySpec, gen_synthetic_study

logger = logging.getLogger("flowgate.sim")


def _sinks_dir(name: str) -> Path:
    return app_config.get_path(app_config.ConfigKeys.DIR_SINKS, "datawork/sinks") / name


def _wait_for_interrupt() -> None:
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    while not stop.wait(1.0):
        pass


def gen(args) -> int:
    bright = BrightBlock(y=args.bright[0], x=args.bright[1], height=args.bright[2]) if args.bright else None
    series = tuple(
        SeriesSpec(
            description=f"{thickness:g}MM",
            slices=args.slices,
            rows=args.rows,
            cols=args.cols,
            slice_thickness=thickness,
            bright=bright,
        )
        for thickness in args.thickness or [3.0]
    )
    spec = SyntheticStudySpec.build(
        seed=args.seed, modality=args.modality, accession=args.accession, series=series
    )
    files = gen_synthetic_study(spec, args.out)
    print(f"Wrote {len(files)} files to {args.out}")
    return 0


def send(args) -> int:
    summary = cli_modality_send(
        args.dir,
        (args.host, args.port),
        args.calling,
        args.called,
        max_pdu=app_config.get_int(app_config.ConfigKeys.NET_MAX_PDU, 16384),
        timeout=app_config.get_float(app_config.ConfigKeys.NET_CONNECT_TIMEOUT_S, 30.0),
    )
    return 0 if summary.success == summary.sent else 1


def sink(args) -> int:
    out = args.out or _sinks_dir(args.ae.lower())
    with run_store_sink(args.port, args.ae, out, args.behavior or None) as running:
        print(f"Storing to {out} as {args.ae} on port {running.port}")
        _wait_for_interrupt()
    return 0


def mllp_sink(args) -> int:
    out = args.out or _sinks_dir("interface")
    with run_mllp_sink(args.port, args.ack, out) as running:
        print(f"Storing HL7 to {out} on port {running.port}, ack {running.ack_mode}")
        _wait_for_interrupt()
    return 0


def scenario(args) -> int:
    work = args.work or app_config.get_path(app_config.ConfigKeys.DIR_WORK, "datawork") / "scenarios"
    failed = 0
    for cfg in read_scenarios(args.config):
        print(f"Running scenario {cfg.name} ({cfg.variant})")
        report = run_scenario_e2e(cfg, work)
        print(report.render(), end="")
        failed += not report.passed
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowgate-sim", description="Simulators for a one-machine pipeline")
    parser.add_argument("--app-config", type=Path, default=app_config.DEFAULT_CONFIG_PATH)
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command_name", required=True)

    p = commands.add_parser("gen", help="write a synthetic study")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--modality", default="CT")
    p.add_argument("--accession", default="ACC001")
    p.add_argument("--slices", type=int, default=5)
    p.add_argument("--rows", type=int, default=10)
    p.add_argument("--cols", type=int, default=10)
    p.add_argument("--thickness", type=float, action="append", help="one series per value")
    p.add_argument("--bright", type=int, nargs=3, metavar=("Y", "X", "HEIGHT"))
    p.set_defaults(run=gen)

    p = commands.add_parser("send", help="C-STORE a directory")
    p.add_argument("--dir", required=True, type=Path)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=11112)
    p.add_argument("--calling", default="MODALITY1")
    p.add_argument("--called", default="FLOWGATE")
    p.set_defaults(run=send)

    p = commands.add_parser("sink", help="run a storage sink")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--ae", default="PACS")
    p.add_argument("--out", type=Path)
    p.add_argument("--behavior", default="", help='e.g. "delay=300 fail_first=2 status=A700"')
    p.set_defaults(run=sink)

    p = commands.add_parser("mllp-sink", help="run an interface engine sink")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--ack", choices=[m.value for m in AckMode], default=AckMode.AA.value)
    p.add_argument("--out", type=Path)
    p.set_defaults(run=mllp_sink)

    p = commands.add_parser("scenario", help="run end-to-end scenarios")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--work", type=Path)
    p.set_defaults(run=scenario)
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
