"""HL7 v2 message model and the pipe-delimited codec."""

import re
from dataclasses import dataclass, field

from lib.errors import InvariantViolation
from lib.hl7.errors import BadDelimiters, NotHl7

SEGMENT_ID = re.compile(r"^[A-Z][A-Z0-9]{2}$")
SEGMENT_TERMINATOR = "\r"

# Repetitions of component lists; an empty field is (("",),).
Field = tuple[tuple[str, ...], ...]
EMPTY: Field = (("",),)


@dataclass(frozen=True)
class Delimiters:
    field: str = "|"
    component: str = "^"
    repetition: str = "~"
    escape: str = "\\"
    subcomponent: str = "&"

    def __post_init__(self):
        chars = [self.field, self.component, self.repetition, self.escape, self.subcomponent]
        if any(len(c) != 1 or c in "\r\n" or c.isalnum() for c in chars):
            raise BadDelimiters(f"delimiters must be single non-alphanumeric characters, got {chars!r}")
        if len(set(chars)) != 5:
            raise BadDelimiters(f"delimiters must be distinct, got {''.join(chars)!r}")

    @property
    def encoding_characters(self) -> str:
        """MSH-2."""
        return self.component + self.repetition + self.escape + self.subcomponent

    def escape_value(self, value: str) -> str:
        e = self.escape
        table = {
            self.escape: f"{e}E{e}",
            self.field: f"{e}F{e}",
            self.component: f"{e}S{e}",
            self.repetition: f"{e}R{e}",
            self.subcomponent: f"{e}T{e}",
        }
        return "".join(table.get(c, c) for c in value)

    def unescape_value(self, value: str) -> str:
        if self.escape not in value:
            return value
        e = re.escape(self.escape)
        table = {
            "E": self.escape,
            "F": self.field,
            "S": self.component,
            "R": self.repetition,
            "T": self.subcomponent,
        }
        # Unknown sequences (\X..\, \.br\) are left as they are.
        return re.sub(f"{e}([EFSRT]){e}", lambda m: table[m.group(1)], value)


DEFAULT_DELIMITERS = Delimiters()


def as_field(value: "str | tuple[str, ...] | Field") -> Field:
    """A plain string is one component; a tuple of strings is a component list."""
    if isinstance(value, str):
        return ((value,),)
    if value and all(isinstance(v, str) for v in value):
        return (tuple(value),)
    return tuple(tuple(rep) for rep in value) or EMPTY


def _is_empty(f: Field) -> bool:
    return all(c == "" for rep in f for c in rep)


@dataclass(frozen=True)
class Segment:
    """fields[0] is field 1. For MSH, fields 1 and 2 hold the delimiters."""

    id: str
    fields: tuple[Field, ...] = ()

    def __post_init__(self):
        if not SEGMENT_ID.match(self.id):
            raise InvariantViolation(f"segment id {self.id!r} must be three uppercase alphanumerics")
        trimmed = list(self.fields)
        while trimmed and _is_empty(trimmed[-1]):
            trimmed.pop()
        object.__setattr__(self, "fields", tuple(EMPTY if _is_empty(f) else f for f in trimmed))

    @classmethod
    def of(cls, id: str, *values) -> "Segment":
        return cls(id, tuple(as_field(v) for v in values))

    def field(self, n: int) -> Field:
        return self.fields[n - 1] if 0 < n <= len(self.fields) else EMPTY

    def component(self, n: int, c: int = 1, repetition: int = 1) -> str:
        f = self.field(n)
        if repetition > len(f):
            return ""
        rep = f[repetition - 1]
        return rep[c - 1] if 0 < c <= len(rep) else ""

    def text(self, n: int, delimiters: Delimiters = DEFAULT_DELIMITERS) -> str:
        """Field n with components rejoined, unescaped; handy for message types like ORM^O01."""
        return delimiters.repetition.join(delimiters.component.join(rep) for rep in self.field(n))


@dataclass(frozen=True)
class Hl7Message:
    segments: tuple[Segment, ...]
    delimiters: Delimiters = field(default=DEFAULT_DELIMITERS)

    def __post_init__(self):
        if not self.segments or self.segments[0].id != "MSH":
            raise InvariantViolation("an HL7 message starts with an MSH segment")

    @property
    def msh(self) -> Segment:
        return self.segments[0]

    def segment(self, id: str) -> Segment | None:
        return next((s for s in self.segments if s.id == id), None)

    def all(self, id: str) -> list[Segment]:
        return [s for s in self.segments if s.id == id]


def msh_segment(delimiters: Delimiters, *values) -> Segment:
    """MSH with fields 1 and 2 filled from the delimiters; values start at MSH-3."""
    return Segment.of("MSH", delimiters.field, delimiters.encoding_characters, *values)


def _encode_field(f: Field, d: Delimiters) -> str:
    return d.repetition.join(d.component.join(d.escape_value(c) for c in rep) for rep in f)


def _encode_segment(segment: Segment, d: Delimiters) -> str:
    if segment.id == "MSH":
        rest = [_encode_field(f, d) for f in segment.fields[2:]]
        return d.field.join(["MSH" + d.field + d.encoding_characters, *rest])
    return d.field.join([segment.id, *(_encode_field(f, d) for f in segment.fields)])


def encode_message(msg: Hl7Message) -> bytes:
    d = msg.delimiters
    msh = msg.msh
    if msh.component(1) not in ("", d.field) or msh.component(2) not in ("", d.encoding_characters):
        raise InvariantViolation("MSH-1/MSH-2 disagree with the message delimiters")
    text = "".join(_encode_segment(s, d) + SEGMENT_TERMINATOR for s in msg.segments)
    return text.encode("utf-8")


def _decode_field(raw: str, d: Delimiters) -> Field:
    return tuple(
        tuple(d.unescape_value(c) for c in rep.split(d.component)) for rep in raw.split(d.repetition)
    )


def parse_message(data: bytes) -> Hl7Message:
    text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    text = text.replace("\r\n", "\r").replace("\n", "\r")
    if not text.startswith("MSH"):
        raise NotHl7(f"message does not start with MSH: {text[:8]!r}")
    if len(text) < 8:
        raise BadDelimiters("MSH is too short to carry its delimiters")

    sep = text[3]
    encoding = text[4:].split(sep, 1)[0]
    if len(encoding) != 4:
        raise BadDelimiters(f"MSH-2 must hold four encoding characters, got {encoding!r}")
    d = Delimiters(sep, encoding[0], encoding[1], encoding[2], encoding[3])

    segments = []
    for line in text.split(SEGMENT_TERMINATOR):
        if not line:
            continue
        parts = line.split(sep)
        seg_id = parts[0]
        if not SEGMENT_ID.match(seg_id):
            raise NotHl7(f"bad segment id {seg_id!r}")
        if seg_id == "MSH":
            fields = [as_field(sep), as_field(parts[1])] + [_decode_field(p, d) for p in parts[2:]]
        else:
            fields = [_decode_field(p, d) for p in parts[1:]]
        segments.append(Segment(seg_id, tuple(fields)))
    if segments[0].id != "MSH":
        raise NotHl7("first segment is not MSH")
    return Hl7Message(tuple(segments), d)
