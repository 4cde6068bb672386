"""Executes an operator graph: ready operators run concurrently, values flow along edges."""

import logging
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from graphlib import TopologicalSorter
from pathlib import Path

from lib.identity import Clock, UidSource
from lib.map.errors import OperatorFailed
from lib.map.graph import AppGraph, Kind, OperatorSpec, validate_dag
from lib.map.model import OperatorRecord, RunManifest
from lib.map.operators import (
    DEFAULT_MIN_FRACTION,
    DEFAULT_THRESHOLD,
    op_series_selector,
    op_series_to_volume,
    op_stub_inference,
    op_study_loader,
    op_write_sc,
    op_write_sr,
)
from lib.rules.expr import parse_expr
from lib.rules.model import ALWAYS

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"


@dataclass
class RunSettings:
    """Run-wide values; graph parameters on an operator take precedence over these."""

    threshold: int = DEFAULT_THRESHOLD
    min_fraction: float = DEFAULT_MIN_FRACTION
    evaluation_type: str = "MONAI"
    seed: int | None = None
    max_workers: int = 4
    uids: UidSource = field(init=False)
    clock: Clock = field(init=False)

    def __post_init__(self):
        self.uids = UidSource(self.seed)
        self.clock = Clock(self.seed)


def _invoke(
    op: OperatorSpec,
    inputs: dict,
    input_dir: Path,
    output_dir: Path,
    settings: RunSettings,
    record: OperatorRecord,
) -> dict:
    params = op.params
    match op.kind:
        case Kind.STUDY_LOADER:
            studies = op_study_loader(input_dir, record.warnings)
            if len(studies) > 1:
                record.warnings.append(
                    f"{len(studies)} studies found; using {studies[0].study_uid}, ignoring "
                    + ", ".join(s.study_uid for s in studies[1:])
                )
            return {"study": studies[0]}
        case Kind.SERIES_SELECTOR:
            criteria = parse_expr(params["criteria"]) if params.get("criteria") else ALWAYS
            return {"series": op_series_selector(inputs["study"], criteria)}
        case Kind.SERIES_TO_VOLUME:
            return {"volume": op_series_to_volume(inputs["series"])}
        case Kind.STUB_INFERENCE:
            threshold = int(params.get("threshold", settings.threshold))
            min_fraction = float(params.get("min_fraction", settings.min_fraction))
            return {"result": op_stub_inference(inputs["volume"], threshold, min_fraction)}
        case Kind.SR_WRITER:
            path = op_write_sr(
                inputs["result"],
                inputs["study"],
                output_dir,
                settings.uids,
                settings.clock,
                params.get("evaluation_type", settings.evaluation_type),
            )
            record.outputs.append(str(path))
            return {"path": path}
        case Kind.SC_WRITER:
            path = op_write_sc(
                inputs["volume"], inputs["result"], inputs["study"], output_dir, settings.uids, settings.clock
            )
            record.outputs.append(str(path))
            return {"path": path}
    raise OperatorFailed(op.name, ValueError(f"unknown kind {op.kind}"))


def run_app(g: AppGraph, input_dir, output_dir, settings: RunSettings | None = None) -> RunManifest:
    """Run every operator once in dependency order and write the manifest.

    A failing operator marks the run failed; everything downstream of it is skipped
    while independent branches still finish.
    """
    settings = settings or RunSettings()
    validate_dag(g)
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest([OperatorRecord(op.name, str(op.kind)) for op in g.operators])
    values: dict[tuple[str, str], object] = {}
    failed: set[str] = set()

    sorter = TopologicalSorter({op.name: set() for op in g.operators})
    for edge in g.edges:
        sorter.add(edge.consumer, edge.producer)
    sorter.prepare()

    def execute(op: OperatorSpec) -> dict:
        record = manifest.record(op.name)
        inputs = {e.input: values[(e.producer, e.output)] for e in g.inbound(op.name)}
        started = time.perf_counter()
        try:
            return _invoke(op, inputs, input_dir, output_dir, settings, record)
        finally:
            record.seconds = time.perf_counter() - started

    with ThreadPoolExecutor(max_workers=settings.max_workers, thread_name_prefix="operator") as pool:
        running: dict[Future, OperatorSpec] = {}
        while sorter.is_active():
            for name in sorter.get_ready():
                op = g.operator(name)
                record = manifest.record(name)
                if any(e.producer in failed for e in g.inbound(name)):
                    record.status = "skipped"
                    failed.add(name)
                    sorter.done(name)
                    continue
                record.status = "running"
                running[pool.submit(execute, op)] = op
            if not running:
                continue
            finished, _ = wait(running, return_when=FIRST_COMPLETED)
            for future in finished:
                op = running.pop(future)
                record = manifest.record(op.name)
                try:
                    outputs = future.result()
                except Exception as e:
                    error = e if isinstance(e, OperatorFailed) else OperatorFailed(op.name, e)
                    logger.error("%s", error)
                    record.status = "failed"
                    record.error = str(error)
                    failed.add(op.name)
                    manifest.failed = True
                    if manifest.failure is None:
                        manifest.failure = error
                else:
                    for port, value in outputs.items():
                        values[(op.name, port)] = value
                    record.status = "ok"
                sorter.done(op.name)

    manifest_path = output_dir / MANIFEST_NAME
    print(f"Writing manifest to {manifest_path}")
    manifest_path.write_text(manifest.render(), encoding="utf-8")
    return manifest
