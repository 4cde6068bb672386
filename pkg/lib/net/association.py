"""Association state and the acceptor side of association negotiation."""

from dataclasses import dataclass, field
from enum import StrEnum
from typing import Callable

from lib.dicom.uids import STORAGE_CLASSES, SUPPORTED_TRANSFER_SYNTAXES, VERIFICATION
from lib.net.pdu import (
    DEFAULT_MAX_PDU,
    MAX_PDU_CAP,
    AeTitle,
    AssociateAc,
    AssociateRj,
    AssociateRq,
    PresentationContext,
)


class AssociationState(StrEnum):
    NEGOTIATING = "negotiating"
    ESTABLISHED = "established"
    RELEASING = "releasing"
    CLOSED = "closed"
    ABORTED = "aborted"


def effective_max_pdu(announced: int) -> int:
    """A peer announcing 0 means unlimited; we cap it."""
    return MAX_PDU_CAP if announced == 0 else min(announced, MAX_PDU_CAP)


@dataclass
class Association:
    calling: AeTitle
    called: AeTitle
    max_pdu_length: int = DEFAULT_MAX_PDU
    contexts: list[PresentationContext] = field(default_factory=list)
    peer: tuple[str, int] = ("", 0)
    state: AssociationState = AssociationState.NEGOTIATING

    def context_by_id(self, context_id: int) -> PresentationContext | None:
        return next((c for c in self.contexts if c.id == context_id), None)

    def context_for(self, abstract_syntax: str) -> PresentationContext | None:
        """First accepted context for the abstract syntax."""
        return next((c for c in self.contexts if c.abstract_syntax == abstract_syntax and c.accepted), None)

    def can_store(self) -> bool:
        return self.state == AssociationState.ESTABLISHED and any(c.accepted for c in self.contexts)


@dataclass(frozen=True)
class LocalConfig:
    """What an acceptor serves: its titles and the syntaxes it understands."""

    ae_titles: frozenset[str]
    abstract_syntaxes: frozenset[str] = frozenset((*STORAGE_CLASSES, VERIFICATION))
    transfer_syntaxes: tuple[str, ...] = SUPPORTED_TRANSFER_SYNTAXES
    max_pdu_length: int = DEFAULT_MAX_PDU
    accept_calling: Callable[[str, str], bool] | None = None


def negotiate_accept(rq: AssociateRq, local: LocalConfig, peer_host: str = "") -> AssociateAc | AssociateRj:
    if rq.called.value not in local.ae_titles:
        return AssociateRj(result=1, source=1, reason=AssociateRj.CALLED_AE_NOT_RECOGNIZED)
    if local.accept_calling is not None and not local.accept_calling(rq.calling.value, peer_host):
        return AssociateRj(result=1, source=1, reason=AssociateRj.CALLING_AE_NOT_RECOGNIZED)

    results = []
    for ctx in rq.contexts:
        if ctx.abstract_syntax not in local.abstract_syntaxes:
            results.append(PresentationContext(ctx.id, "", (), PresentationContext.ABSTRACT_SYNTAX_NOT_SUPPORTED))
            continue
        chosen = next((ts for ts in ctx.transfer_syntaxes if ts in local.transfer_syntaxes), None)
        if chosen is None:
            results.append(PresentationContext(ctx.id, "", (), PresentationContext.TRANSFER_SYNTAXES_NOT_SUPPORTED))
        else:
            results.append(PresentationContext(ctx.id, "", (chosen,), PresentationContext.ACCEPTED))

    return AssociateAc(
        called=rq.called,
        calling=rq.calling,
        contexts=tuple(results),
        max_pdu_length=local.max_pdu_length,
        application_context=rq.application_context,
    )


def merge_contexts(rq: AssociateRq, ac: AssociateAc) -> list[PresentationContext]:
    """AC contexts carry no abstract syntax on the wire; restore it from the proposal."""
    proposed = {ctx.id: ctx.abstract_syntax for ctx in rq.contexts}
    return [
        PresentationContext(ctx.id, proposed.get(ctx.id, ""), ctx.transfer_syntaxes, ctx.result)
        for ctx in ac.contexts
    ]
