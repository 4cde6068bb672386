"""AI receiver stand-in: collect studies, run the application graph, store results back."""

import logging
import threading
import time
from pathlib import Path

from lib.dicom.codec import read_part10, write_part10
from lib.dicom.dataset import DicomFile
from lib.errors import FlowgateError
from lib.map.graph import AppGraph, parse_graph
from lib.map.model import RunManifest
from lib.map.runner import RunSettings, run_app
from lib.net.dimse import Status
from lib.net.scp import AssociationMeta, ListenConfig, StoreServer, scp_serve
from lib.net.scu import Endpoint, scu_store

logger = logging.getLogger(__name__)

# Loader -> selector -> volume -> inference, written out as SR and SC.
CHAIN_GRAPH = """\
[operator loader]
kind = study_loader

[operator selector]
kind = series_selector

[operator volume]
kind = series_to_volume

[operator inference]
kind = stub_inference

[operator sr]
kind = sr_writer

[operator sc]
kind = sc_writer

[edge]
from = loader.study
to = selector.study

[edge]
from = selector.series
to = volume.series

[edge]
from = volume.volume
to = inference.volume

[edge]
from = inference.result
to = sr.result

[edge]
from = loader.study
to = sr.study

[edge]
from = volume.volume
to = sc.volume

[edge]
from = inference.result
to = sc.result

[edge]
from = loader.study
to = sc.study
"""


class AiReceiver:
    """Runs the graph once per study after idle_s without new instances."""

    def __init__(
        self,
        port: int,
        ae_title: str,
        work_dir,
        gateway: Endpoint | None = None,
        gateway_ae: str = "FLOWGATE",
        calling_ae: str = "AI_RECEIVER",
        graph: AppGraph | None = None,
        settings: RunSettings | None = None,
        idle_s: float = 1.0,
        host: str = "127.0.0.1",
    ):
        self.work_dir = Path(work_dir)
        self.gateway = gateway
        self.gateway_ae = gateway_ae
        self.calling_ae = calling_ae
        self.graph = graph or parse_graph(CHAIN_GRAPH)
        self.settings = settings or RunSettings()
        self.idle_s = idle_s
        self.results: dict[str, RunManifest] = {}
        self._listen = ListenConfig(port=port, ae_titles=[ae_title], host=host)
        self._server: StoreServer | None = None
        self._activity: dict[str, float] = {}
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        self._watcher: threading.Thread | None = None

    def start(self) -> "AiReceiver":
        self._server = scp_serve(self._listen, self.store)
        self._stopping.clear()
        self._watcher = threading.Thread(target=self._watch, name="ai-receiver", daemon=True)
        self._watcher.start()
        return self

    @property
    def port(self) -> int:
        return self._server.port if self._server is not None else self._listen.port

    def shutdown(self) -> None:
        self._stopping.set()
        if self._server is not None:
            self._server.shutdown()
            self._server = None
        if self._watcher is not None:
            self._watcher.join(timeout=30.0)
            self._watcher = None

    def __enter__(self):
        return self if self._server is not None else self.start()

    def __exit__(self, *exc):
        self.shutdown()

    def store(self, meta: AssociationMeta, file: DicomFile) -> int:
        study_uid = file.dataset.text("StudyInstanceUID", "") or "unknown"
        folder = self.work_dir / "incoming" / study_uid
        folder.mkdir(parents=True, exist_ok=True)
        write_part10(folder / f"{file.sop_instance_uid}.dcm", file)
        with self._lock:
            self._activity[study_uid] = time.monotonic()
        return Status.SUCCESS

    def _watch(self) -> None:
        while not self._stopping.wait(0.2):
            now = time.monotonic()
            with self._lock:
                ready = [uid for uid, last in self._activity.items() if now - last >= self.idle_s]
                for uid in ready:
                    del self._activity[uid]
            for uid in ready:
                self.process(uid)

    def process(self, study_uid: str) -> RunManifest | None:
        input_dir = self.work_dir / "incoming" / study_uid
        output_dir = self.work_dir / "results" / study_uid
        print(f"Running graph on study {study_uid}")
        try:
            manifest = run_app(self.graph, input_dir, output_dir, self.settings)
        except FlowgateError as e:
            logger.error("graph rejected for %s: %s", study_uid, e)
            return None
        self.results[study_uid] = manifest
        if manifest.failed:
            logger.error("graph run for %s failed: %s", study_uid, manifest.failure)
            return manifest
        if self.gateway is None:
            return manifest

        files = [read_part10(path) for path in manifest.outputs]
        try:
            statuses = scu_store(self.gateway, self.calling_ae, self.gateway_ae, files)
        except FlowgateError as e:
            logger.error("cannot return results for %s: %s", study_uid, e)
            return manifest
        print(f"Returned {sum(1 for s in statuses if s == Status.SUCCESS)}/{len(files)} results for {study_uid}")
        return manifest
