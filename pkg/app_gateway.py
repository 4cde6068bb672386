import argparse
import logging
import signal
import sys
import threading
from pathlib import Path

import app_config
from lib.errors import FlowgateError
from lib.gateway.audit import audit_query
from lib.gateway.config import read_gateway_config
from lib.gateway.service import Gateway, admin_command
from lib.logs import setup_logging
from lib.rules.parser import format_rules, parse_rules
from lib.sections import ConfigSyntaxError

logger = logging.getLogger("flowgate")


def serve(args) -> int:
    config_path = args.config or app_config.get_path(app_config.ConfigKeys.GATEWAY_CONFIG, "configs/gateway.conf")
    print(f"Loading gateway config {config_path}")
    gateway = Gateway(*read_gateway_config(config_path)).start()
    stop = threading.Event()

    def on_hangup(signum, frame):
        try:
            app_config.reload_config()
            setup_logging(verbose=args.verbose)
            print(f"Reloaded rules, version {gateway.reload()}")
        except (FlowgateError, OSError) as e:
            logger.error("reload failed, keeping version %d: %s", gateway.rules.current.version, e)

    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    if hasattr(signal, "SIGHUP"):
        signal.signal(signal.SIGHUP, on_hangup)

    print(f"Listening on {gateway.config.listen_host}:{gateway.port} as {gateway.config.ae_title}")
    while not stop.wait(1.0):
        pass
    print("Stopping")
    gateway.stop()
    return 0


def admin(args) -> int:
    port = args.port or app_config.get_int(app_config.ConfigKeys.GATEWAY_ADMIN_PORT, 11180)
    print(admin_command(port, args.command.upper()))
    return 0


def audit(args) -> int:
    log = args.log or app_config.get_path(app_config.ConfigKeys.DIR_AUDIT, "datawork/audit") / "audit.ndjson"
    seq_range = None
    if args.since is not None or args.until is not None:
        seq_range = (args.since or 0, args.until if args.until is not None else sys.maxsize)
    events = audit_query(log, study_uid=args.study, category=args.category, seq_range=seq_range)
    for e in events:
        print(f"{e.seq:>6} {e.timestamp} v{e.ruleset_version} {e.category:<9} {e.study_uid} {e.detail}")
    print(f"{len(events)} events")
    return 0


def validate(args) -> int:
    text = Path(args.rules).read_text(encoding="utf-8")
    try:
        rs = parse_rules(text, extra_sections=("gateway",))
    except ConfigSyntaxError as e:
        print(f"{args.rules}: {e}")
        return 1
    if args.format:
        print(format_rules(rs), end="")
    else:
        print(f"{args.rules}: {len(rs.sources)} sources, {len(rs.destinations)} destinations, {len(rs.rules)} rules")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowgate", description="DICOM routing gateway")
    parser.add_argument("--app-config", type=Path, default=app_config.DEFAULT_CONFIG_PATH)
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command_name", required=True)

    p = commands.add_parser("serve", help="run the gateway in the foreground")
    p.add_argument("--config", type=Path)
    p.set_defaults(run=serve)

    for name in ("reload", "rollback", "status"):
        p = commands.add_parser(name, help=f"send {name.upper()} to a running gateway")
        p.add_argument("--port", type=int)
        p.set_defaults(run=admin, command=name)

    p = commands.add_parser("audit", help="query the audit log")
    p.add_argument("--log", type=Path)
    p.add_argument("--study")
    p.add_argument("--category")
    p.add_argument("--since", type=int, help="first sequence number")
    p.add_argument("--until", type=int, help="last sequence number")
    p.set_defaults(run=audit)

    p = commands.add_parser("validate", help="check a rules file")
    p.add_argument("--rules", required=True, type=Path)
    p.add_argument("--format", action="store_true", help="print the rules in canonical form")
    p.set_defaults(run=validate)
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
