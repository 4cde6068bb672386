"""Routing configuration and decision types.

Everything here is frozen so a RuleSet can be shared by any number of
evaluating threads while the gateway swaps in a new one.
"""

from dataclasses import dataclass, field
from enum import StrEnum

from lib.dicom.tags import Tag, Vr


class ValueKind(StrEnum):
    STRING = "string"
    NUMBER = "number"
    ANY = "any"


# Selector keyword -> (tag, kind). "source" is the resolved source name, not a tag.
ATTRIBUTES: dict[str, tuple[Tag | None, ValueKind]] = {
    "modality": (Tag(0x0008, 0x0060), ValueKind.STRING),
    "study_description": (Tag(0x0008, 0x1030), ValueKind.STRING),
    "series_description": (Tag(0x0008, 0x103E), ValueKind.STRING),
    "slice_thickness": (Tag(0x0018, 0x0050), ValueKind.NUMBER),
    "sop_class": (Tag(0x0008, 0x0016), ValueKind.STRING),
    "accession": (Tag(0x0008, 0x0050), ValueKind.STRING),
    "source": (None, ValueKind.STRING),
}

COMPARISONS = ("==", "!=", "~", "<", "<=", ">", ">=")
ORDERINGS = frozenset({"<", "<=", ">", ">="})


def selector_kind(selector: str) -> ValueKind:
    if selector in ATTRIBUTES:
        return ATTRIBUTES[selector][1]
    return ValueKind.ANY


@dataclass(frozen=True)
class Predicate:
    selector: str
    op: str
    literal: str | float


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    operands: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    operands: tuple["Expr", ...]


Expr = Predicate | Const | Not | And | Or

ALWAYS = Const(True)


class Mode(StrEnum):
    PARALLEL = "parallel"
    SERIAL = "serial"


class Level(StrEnum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"

    @property
    def rank(self) -> int:
        return {"HIGH": 3, "MEDIUM": 2, "LOW": 1}[self.value]


@dataclass(frozen=True)
class SetOp:
    tag: Tag
    vr: Vr
    value: str


@dataclass(frozen=True)
class DeleteOp:
    tag: Tag


@dataclass(frozen=True)
class CopyOp:
    source: Tag
    target: Tag


MorphOp = SetOp | DeleteOp | CopyOp


@dataclass(frozen=True)
class Route:
    destinations: tuple[str, ...]
    mode: Mode = Mode.PARALLEL


@dataclass(frozen=True)
class Block:
    pass


@dataclass(frozen=True)
class Morph:
    ops: tuple[MorphOp, ...]


@dataclass(frozen=True)
class SetPriority:
    level: Level


Action = Route | Block | Morph | SetPriority


@dataclass(frozen=True)
class SourceDef:
    name: str
    calling_ae: str
    peer: str | None = None
    kind: str = "modality"

    def accepts(self, calling_ae: str, peer_host: str = "") -> bool:
        if calling_ae != self.calling_ae:
            return False
        return self.peer is None or not peer_host or self.peer == peer_host


@dataclass(frozen=True)
class DestinationDef:
    name: str
    host: str
    port: int
    called_ae: str
    calling_ae: str | None = None


@dataclass(frozen=True)
class Rule:
    name: str
    when: Expr = ALWAYS
    actions: tuple[Action, ...] = ()
    continue_: bool = False

    @property
    def blocks(self) -> bool:
        return any(isinstance(a, Block) for a in self.actions)


@dataclass(frozen=True)
class RuleSet:
    version: int
    sources: tuple[SourceDef, ...] = ()
    destinations: tuple[DestinationDef, ...] = ()
    rules: tuple[Rule, ...] = ()
    _compiled: object = field(default=None, init=False, repr=False, compare=False, hash=False)

    def source(self, name: str) -> SourceDef | None:
        return next((s for s in self.sources if s.name == name), None)

    def destination(self, name: str) -> DestinationDef | None:
        return next((d for d in self.destinations if d.name == name), None)


@dataclass(frozen=True)
class RouteTarget:
    name: str
    mode: Mode


@dataclass(frozen=True)
class Decision:
    ruleset_version: int
    matched: tuple[str, ...] = ()
    targets: tuple[RouteTarget, ...] = ()
    morphs: tuple[MorphOp, ...] = ()
    priority: Level | None = None
    blocked: bool = False
    reason: str = ""

    @property
    def destinations(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.targets)
