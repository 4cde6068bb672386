"""Per-destination delivery queues.

Every destination has one worker thread draining a FIFO queue, so instances reach a
destination in the order they were enqueued while distinct destinations proceed
concurrently. A serial route is a chain: the next destination's delivery is enqueued
only when the previous one has finished.
"""

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from lib.dicom.codec import write_part10
from lib.dicom.dataset import DicomFile
from lib.gateway.config import RetryPolicy
from lib.net.dimse import Status
from lib.net.errors import DimseError
from lib.net.scu import scu_store
from lib.rules.model import DestinationDef, Mode

logger = logging.getLogger(__name__)

# Warning statuses still mean the object was stored.
STORED = frozenset({Status.SUCCESS, 0xB000, 0xB006, 0xB007})


@dataclass
class Delivery:
    study_uid: str
    file: DicomFile
    destination: DestinationDef
    then: list["Delivery"] = field(default_factory=list)


@dataclass(frozen=True)
class Outcome:
    study_uid: str
    destination: str
    sop_instance_uid: str
    delivered: bool
    attempts: int
    status: int | None = None
    reason: str = ""

    @property
    def retries(self) -> int:
        return self.attempts - 1


OutcomeHandler = Callable[[Outcome], None]


class Dispatcher:
    def __init__(
        self,
        calling_ae: str,
        dead_letter_dir,
        retry: RetryPolicy | None = None,
        on_outcome: OutcomeHandler | None = None,
        max_pdu: int = 16384,
        timeout_s: float = 30.0,
    ):
        self.calling_ae = calling_ae
        self.dead_letter_dir = Path(dead_letter_dir)
        self.retry = retry or RetryPolicy()
        self.on_outcome = on_outcome
        self.max_pdu = max_pdu
        self.timeout_s = timeout_s
        self._queues: dict[str, queue.Queue] = {}
        self._workers: dict[str, threading.Thread] = {}
        self._lock = threading.Lock()
        self._pending = 0
        self._idle = threading.Condition(self._lock)
        self._stopped = False

    def _queue_for(self, name: str) -> queue.Queue:
        with self._lock:
            q = self._queues.get(name)
            if q is None:
                q = queue.Queue()
                worker = threading.Thread(target=self._drain, args=(q,), name=f"deliver:{name}", daemon=True)
                self._queues[name] = q
                self._workers[name] = worker
                worker.start()
            return q

    def _enqueue(self, delivery: Delivery) -> None:
        self._queue_for(delivery.destination.name).put(delivery)

    def dispatch_forwards(self, study_uid: str, file: DicomFile, targets: list[tuple[DestinationDef, Mode]]) -> int:
        """Queue file for each target; returns how many deliveries were queued.

        Parallel targets are queued at once. Serial targets form one chain in the order given.
        """
        parallel = [Delivery(study_uid, file, d) for d, mode in targets if mode == Mode.PARALLEL]
        serial = [Delivery(study_uid, file, d) for d, mode in targets if mode == Mode.SERIAL]
        if serial:
            head = serial[0]
            head.then = serial[1:]
        with self._lock:
            if self._stopped:
                raise DimseError("dispatcher stopped")
            self._pending += len(parallel) + len(serial)
        for delivery in parallel:
            self._enqueue(delivery)
        if serial:
            self._enqueue(serial[0])
        return len(parallel) + len(serial)

    def _drain(self, q: queue.Queue) -> None:
        while True:
            delivery = q.get()
            if delivery is None:
                return
            try:
                outcome = self._deliver(delivery)
                if self.on_outcome is not None:
                    self.on_outcome(outcome)
            except Exception:
                logger.exception("delivery to %s failed unexpectedly", delivery.destination.name)
            finally:
                if delivery.then:
                    following, *rest = delivery.then
                    following.then = rest
                    self._enqueue(following)
                with self._idle:
                    self._pending -= 1
                    self._idle.notify_all()

    def _deliver(self, delivery: Delivery) -> Outcome:
        dest = delivery.destination
        sop = delivery.file.sop_instance_uid
        status: int | None = None
        reason = ""
        for attempt in range(1, self.retry.max_attempts + 1):
            if attempt > 1:
                time.sleep(self.retry.backoff_s(attempt - 1))
            try:
                [status] = scu_store(
                    (dest.host, dest.port),
                    dest.calling_ae or self.calling_ae,
                    dest.called_ae,
                    [delivery.file],
                    self.max_pdu,
                    self.timeout_s,
                )
            except (DimseError, OSError) as e:
                status, reason = None, str(e)
                logger.warning("attempt %d of %s -> %s: %s", attempt, sop, dest.name, e)
                continue
            if status in STORED:
                logger.debug("delivered %s -> %s on attempt %d", sop, dest.name, attempt)
                return Outcome(delivery.study_uid, dest.name, sop, True, attempt, status)
            reason = f"status {status:#06x}"
            logger.warning("attempt %d of %s -> %s: %s", attempt, sop, dest.name, reason)

        self._dead_letter(delivery, reason)
        return Outcome(delivery.study_uid, dest.name, sop, False, self.retry.max_attempts, status, reason)

    def _dead_letter(self, delivery: Delivery, reason: str) -> None:
        folder = self.dead_letter_dir / delivery.destination.name
        sop = delivery.file.sop_instance_uid
        try:
            folder.mkdir(parents=True, exist_ok=True)
            write_part10(folder / f"{sop}.dcm", delivery.file)
            (folder / f"{sop}.reason").write_text(
                f"destination = {delivery.destination.name}\n"
                f"study = {delivery.study_uid}\n"
                f"attempts = {self.retry.max_attempts}\n"
                f"reason = {reason}\n",
                encoding="utf-8",
            )
        except OSError as e:
            logger.error("cannot dead-letter %s for %s: %s", sop, delivery.destination.name, e)
            return
        logger.error("dead-lettered %s for %s: %s", sop, delivery.destination.name, reason)

    @property
    def pending(self) -> int:
        with self._lock:
            return self._pending

    def drain(self, timeout: float | None = None) -> bool:
        """Block until every queued delivery has finished; False on timeout."""
        with self._idle:
            return self._idle.wait_for(lambda: self._pending == 0, timeout)

    def stop(self, timeout: float | None = 10.0) -> None:
        with self._lock:
            self._stopped = True
            workers = list(self._workers.items())
        for name, _ in workers:
            self._queues[name].put(None)
        for _, worker in workers:
            worker.join(timeout)
