"""Routing configuration files: [source], [destination] and [rule] sections.

format_rules is the inverse of parse_rules: parse(format(rs)) == rs.
"""

import re

from lib.dicom.tags import Tag, Vr
from lib.errors import InvariantViolation
from lib.net.pdu import AeTitle
from lib.rules.errors import DuplicateName, UnresolvedReference
from lib.rules.expr import format_expr, parse_expr, quote, unescape
from lib.rules.model import (
    ALWAYS,
    Action,
    Block,
    CopyOp,
    DeleteOp,
    DestinationDef,
    Level,
    Mode,
    Morph,
    MorphOp,
    Route,
    Rule,
    RuleSet,
    SetOp,
    SetPriority,
    SourceDef,
)
from lib.sections import (
    IDENTIFIER,
    ConfigSyntaxError,
    Entry,
    Section,
    parse_bool,
    parse_list,
    parse_sections,
)

_TAG = r"\(\s*[0-9A-Fa-f]{4}\s*,\s*[0-9A-Fa-f]{4}\s*\)"
_SET = re.compile(rf'^set\s+({_TAG})\s+([A-Z]{{2}})\s+("(?:[^"\\]|\\.)*")$')
_DELETE = re.compile(rf"^delete\s+({_TAG})$")
_COPY = re.compile(rf"^copy\s+({_TAG})\s*->\s*({_TAG})$")
_ROUTE = re.compile(rf"^({IDENTIFIER}(?:\s*,\s*{IDENTIFIER})*)\s*(?::\s*(\w+))?$")

SOURCE_KEYS = {"calling_ae", "peer", "kind"}
DESTINATION_KEYS = {"host", "port", "called_ae", "calling_ae"}
RULE_KEYS = {"when", "route", "block", "morph", "priority", "continue"}
SOURCE_KINDS = ("modality", "ai")


def _ae(entry: Entry) -> str:
    try:
        return AeTitle(entry.value).value
    except InvariantViolation:
        raise entry.error(f"'{entry.value}' is not a valid AE title") from None


def _required(section: Section, key: str) -> Entry:
    entry = section.get(key)
    if entry is None or not entry.value:
        raise section.error(f"[{section.kind} {section.name}] is missing '{key}'")
    return entry


def _check_keys(section: Section, allowed: set[str]) -> None:
    for entry in section.entries:
        if entry.key not in allowed:
            raise entry.error(f"unknown key '{entry.key}' in [{section.kind}]")


def _single(section: Section, key: str) -> None:
    found = [e for e in section.entries if e.key == key]
    if len(found) > 1:
        raise found[1].error(f"[{section.kind} {section.name}] may have only one '{key}'")


def _parse_source(section: Section) -> SourceDef:
    _check_keys(section, SOURCE_KEYS)
    kind = section.get("kind")
    if kind is not None and kind.value not in SOURCE_KINDS:
        raise kind.error(f"source kind must be one of {', '.join(SOURCE_KINDS)}")
    peer = section.get("peer")
    return SourceDef(
        name=section.name,
        calling_ae=_ae(_required(section, "calling_ae")),
        peer=peer.value if peer and peer.value else None,
        kind=kind.value if kind else "modality",
    )


def _parse_destination(section: Section) -> DestinationDef:
    _check_keys(section, DESTINATION_KEYS)
    port_entry = _required(section, "port")
    try:
        port = int(port_entry.value)
    except ValueError:
        raise port_entry.error(f"port must be an integer, got {port_entry.value!r}") from None
    if not 1 <= port <= 65535:
        raise port_entry.error(f"port {port} outside 1-65535")
    calling = section.get("calling_ae")
    return DestinationDef(
        name=section.name,
        host=_required(section, "host").value,
        port=port,
        called_ae=_ae(_required(section, "called_ae")),
        calling_ae=_ae(calling) if calling else None,
    )


def parse_morph(entry: Entry) -> MorphOp:
    text = entry.value
    if match := _SET.match(text):
        tag = Tag.parse(match.group(1))
        try:
            vr = Vr(match.group(2))
        except ValueError:
            raise entry.error(f"unknown VR {match.group(2)}") from None
        if vr == Vr.SQ:
            raise entry.error("morph cannot set a sequence")
        op: MorphOp = SetOp(tag, vr, unescape(match.group(3)[1:-1]))
    elif match := _DELETE.match(text):
        op = DeleteOp(Tag.parse(match.group(1)))
    elif match := _COPY.match(text):
        op = CopyOp(Tag.parse(match.group(1)), Tag.parse(match.group(2)))
    else:
        raise entry.error(
            'morph must be: set (gggg,eeee) VR "value" | delete (gggg,eeee) | copy (gggg,eeee) -> (gggg,eeee)'
        )
    touched = [op.tag] if not isinstance(op, CopyOp) else [op.source, op.target]
    if any(tag.is_file_meta for tag in touched):
        raise entry.error("morphs cannot touch file meta (group 0002)")
    return op


def _parse_route(entry: Entry) -> Route:
    match = _ROUTE.match(entry.value)
    if not match:
        raise entry.error("route must be: name{, name} : parallel|serial")
    mode_text = match.group(2) or Mode.PARALLEL.value
    if mode_text not in (Mode.PARALLEL.value, Mode.SERIAL.value):
        raise entry.error(f"route mode must be parallel or serial, got {mode_text!r}")
    names = tuple(dict.fromkeys(parse_list(match.group(1))))
    return Route(names, Mode(mode_text))


def _parse_rule(section: Section) -> Rule:
    _check_keys(section, RULE_KEYS)
    for key in ("when", "route", "block", "priority", "continue"):
        _single(section, key)

    when = ALWAYS
    continue_ = False
    actions: list[Action] = []
    morph_ops: list[MorphOp] = []
    morph_slot: int | None = None

    for entry in section.entries:
        match entry.key:
            case "when":
                when = parse_expr(entry.value, entry.line, entry.column)
            case "route":
                actions.append(_parse_route(entry))
            case "block":
                if parse_bool(entry):
                    actions.append(Block())
            case "morph":
                if morph_slot is None:
                    morph_slot = len(actions)
                    actions.append(Morph(()))
                morph_ops.append(parse_morph(entry))
            case "priority":
                try:
                    actions.append(SetPriority(Level(entry.value.upper())))
                except ValueError:
                    raise entry.error("priority must be HIGH, MEDIUM or LOW") from None
            case "continue":
                continue_ = parse_bool(entry)

    if morph_slot is not None:
        actions[morph_slot] = Morph(tuple(morph_ops))
    return Rule(section.name, when, tuple(actions), continue_)


def parse_rules(text: str, version: int = 1, extra_sections: tuple[str, ...] = ()) -> RuleSet:
    """Parse a routing configuration.

    Sections whose kind is listed in extra_sections (the gateway's own [gateway]
    block, for instance) are skipped here and left to their owner.
    """
    sources: dict[str, SourceDef] = {}
    destinations: dict[str, DestinationDef] = {}
    rules: dict[str, Rule] = {}
    targets = {"source": sources, "destination": destinations, "rule": rules}
    parsers = {"source": _parse_source, "destination": _parse_destination, "rule": _parse_rule}

    for section in parse_sections(text):
        if section.kind in extra_sections:
            continue
        if section.kind not in parsers:
            raise section.error(f"unknown section [{section.kind}]")
        if section.name is None:
            raise section.error(f"[{section.kind}] needs a name")
        bucket = targets[section.kind]
        if section.name in bucket:
            raise DuplicateName(section.kind, section.name)
        bucket[section.name] = parsers[section.kind](section)

    for rule in rules.values():
        for action in rule.actions:
            if isinstance(action, Route):
                for name in action.destinations:
                    if name not in destinations:
                        raise UnresolvedReference(name, f"rule '{rule.name}'")

    return RuleSet(
        version=version,
        sources=tuple(sources.values()),
        destinations=tuple(destinations.values()),
        rules=tuple(rules.values()),
    )


def format_morph(op: MorphOp) -> str:
    match op:
        case SetOp(tag, vr, value):
            return f"set {tag} {vr.value} {quote(value)}"
        case DeleteOp(tag):
            return f"delete {tag}"
        case CopyOp(source, target):
            return f"copy {source} -> {target}"
    raise InvariantViolation(f"not a morph op: {op!r}")


def format_rules(rs: RuleSet) -> str:
    lines: list[str] = []
    for source in rs.sources:
        lines += [f"[source {source.name}]", f"calling_ae = {source.calling_ae}"]
        if source.peer:
            lines.append(f"peer = {source.peer}")
        if source.kind != "modality":
            lines.append(f"kind = {source.kind}")
        lines.append("")
    for dest in rs.destinations:
        lines += [
            f"[destination {dest.name}]",
            f"host = {dest.host}",
            f"port = {dest.port}",
            f"called_ae = {dest.called_ae}",
        ]
        if dest.calling_ae:
            lines.append(f"calling_ae = {dest.calling_ae}")
        lines.append("")
    for rule in rs.rules:
        lines.append(f"[rule {rule.name}]")
        if rule.when != ALWAYS:
            lines.append(f"when = {format_expr(rule.when)}")
        for action in rule.actions:
            match action:
                case Route(names, mode):
                    lines.append(f"route = {', '.join(names)} : {mode.value}")
                case Block():
                    lines.append("block = true")
                case Morph(ops):
                    lines += [f"morph = {format_morph(op)}" for op in ops]
                case SetPriority(level):
                    lines.append(f"priority = {level.value}")
        if rule.continue_:
            lines.append("continue = true")
        lines.append("")
    return "\n".join(lines)


__all__ = ["ConfigSyntaxError", "format_rules", "parse_morph", "parse_rules"]
