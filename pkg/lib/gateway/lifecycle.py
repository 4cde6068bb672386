"""Per-study lifecycle from first instance received to priority message sent."""

import logging
import time
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Callable

from lib.rules.model import Level

logger = logging.getLogger(__name__)


class StudyState(StrEnum):
    RECEIVING = "RECEIVING"
    FORWARDED = "FORWARDED"
    AI_PENDING = "AI_PENDING"
    AI_COMPLETE = "AI_COMPLETE"
    RESULTS_DISTRIBUTED = "RESULTS_DISTRIBUTED"
    HL7_SENT = "HL7_SENT"
    FAILED = "FAILED"


class StudyEvent(StrEnum):
    INSTANCE_RECEIVED = "instance_received"
    FORWARDED = "forwarded"
    AI_ROUTED = "ai_routed"
    AI_RESULT = "ai_result"
    RESULTS_DISTRIBUTED = "results_distributed"
    HL7_SENT = "hl7_sent"
    TIMEOUT = "timeout"
    FAILURE = "failure"


S, E = StudyState, StudyEvent

# (state, event) -> next state. Entries mapping a state to itself are accepted repeats
# (more instances of a study, a second result object) and leave no history.
TRANSITIONS: dict[tuple[StudyState, StudyEvent], StudyState] = {
    (S.RECEIVING, E.INSTANCE_RECEIVED): S.RECEIVING,
    (S.RECEIVING, E.FORWARDED): S.FORWARDED,
    (S.FORWARDED, E.INSTANCE_RECEIVED): S.FORWARDED,
    (S.FORWARDED, E.FORWARDED): S.FORWARDED,
    (S.FORWARDED, E.AI_ROUTED): S.AI_PENDING,
    (S.AI_PENDING, E.INSTANCE_RECEIVED): S.AI_PENDING,
    (S.AI_PENDING, E.FORWARDED): S.AI_PENDING,
    (S.AI_PENDING, E.AI_ROUTED): S.AI_PENDING,
    (S.AI_PENDING, E.AI_RESULT): S.AI_COMPLETE,
    (S.AI_PENDING, E.TIMEOUT): S.FAILED,
    (S.AI_COMPLETE, E.AI_RESULT): S.AI_COMPLETE,
    (S.AI_COMPLETE, E.RESULTS_DISTRIBUTED): S.RESULTS_DISTRIBUTED,
    (S.RESULTS_DISTRIBUTED, E.AI_RESULT): S.RESULTS_DISTRIBUTED,
    (S.RESULTS_DISTRIBUTED, E.RESULTS_DISTRIBUTED): S.RESULTS_DISTRIBUTED,
    (S.RESULTS_DISTRIBUTED, E.HL7_SENT): S.HL7_SENT,
    (S.HL7_SENT, E.AI_RESULT): S.HL7_SENT,
    (S.HL7_SENT, E.RESULTS_DISTRIBUTED): S.HL7_SENT,
    (S.HL7_SENT, E.HL7_SENT): S.HL7_SENT,
}


@dataclass
class DeliveryStats:
    delivered: int = 0
    failed: int = 0
    retries: int = 0
    last_status: int | None = None


@dataclass
class StudyRecord:
    study_uid: str
    accession: str = ""
    source_ae: str = ""
    state: StudyState = StudyState.RECEIVING
    ledger: dict[str, DeliveryStats] = field(default_factory=dict)
    priority: Level | None = None
    history: list[tuple[StudyState, float]] = field(default_factory=list)
    instances: int = 0
    last_activity: float = field(default_factory=time.monotonic)
    completion_reported: bool = False

    def __post_init__(self):
        if not self.history:
            self.history.append((self.state, time.time()))

    def entered(self, state: StudyState) -> float | None:
        """Wall-clock time the record last entered state."""
        times = [t for s, t in self.history if s == state]
        return times[-1] if times else None

    def stats(self, destination: str) -> DeliveryStats:
        return self.ledger.setdefault(destination, DeliveryStats())


def transition(
    record: StudyRecord, event: StudyEvent, on_illegal: Callable[[str], None] | None = None
) -> StudyRecord:
    """Apply event in place; FAILURE is accepted from every state.

    An event with no edge from the current state leaves the record as it is and is
    reported through on_illegal.
    """
    if event == StudyEvent.FAILURE:
        target = StudyState.FAILED
    else:
        target = TRANSITIONS.get((record.state, event))
    if target is None:
        message = f"illegal event {event} in state {record.state} for study {record.study_uid}"
        logger.warning(message)
        if on_illegal is not None:
            on_illegal(message)
        return record
    if target != record.state:
        record.state = target
        record.history.append((target, time.time()))
    return record
