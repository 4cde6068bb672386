"""Rule evaluation, atomic rule-set swaps and tag morphing.

Predicates are compiled once per RuleSet into closures. A comparison against an
absent attribute is false for every operator, != included; `not` then negates
that boolean.
"""

import logging
import re
import struct
import threading
from dataclasses import replace
from typing import Callable

from lib.dicom.dataset import DataSet
from lib.dicom.errors import DicomError
from lib.dicom.tags import Vr
from lib.errors import InvariantViolation
from lib.rules.errors import CopySourceMissing, StaleVersion
from lib.rules.expr import AttributeView
from lib.rules.model import (
    And,
    Const,
    CopyOp,
    Decision,
    DeleteOp,
    Expr,
    Level,
    Morph,
    MorphOp,
    Not,
    Or,
    Predicate,
    Route,
    RouteTarget,
    Rule,
    RuleSet,
    SetOp,
    SetPriority,
    SourceDef,
    ValueKind,
    selector_kind,
)

logger = logging.getLogger(__name__)

Matcher = Callable[[AttributeView, str | None], bool]

NO_MATCH = "no-match"
NO_ROUTE = "no-route"


def _as_number(text: str | None) -> float | None:
    if text is None:
        return None
    first = text.split("\\")[0].strip()
    try:
        return float(first)
    except ValueError:
        return None


_NUMERIC_OPS: dict[str, Callable[[float, float], bool]] = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _compile_predicate(p: Predicate) -> Matcher:
    selector = p.selector

    def fetch(attrs: AttributeView, source: str | None) -> str | None:
        return source if selector == "source" else attrs.get(selector)

    if isinstance(p.literal, float) or selector_kind(selector) == ValueKind.NUMBER:
        literal = float(p.literal)
        compare = _NUMERIC_OPS[p.op]

        def numeric(attrs, source):
            value = _as_number(fetch(attrs, source))
            return value is not None and compare(value, literal)

        return numeric

    if p.op == "~":
        pattern = re.compile(p.literal)

        def regex(attrs, source):
            value = fetch(attrs, source)
            return value is not None and pattern.search(value) is not None

        return regex

    literal = p.literal
    if p.op == "==":
        return lambda attrs, source: (v := fetch(attrs, source)) is not None and v == literal
    return lambda attrs, source: (v := fetch(attrs, source)) is not None and v != literal


def compile_expr(expr: Expr) -> Matcher:
    match expr:
        case Const(value):
            return lambda attrs, source: value
        case Predicate():
            return _compile_predicate(expr)
        case Not(operand):
            inner = compile_expr(operand)
            return lambda attrs, source: not inner(attrs, source)
        case And(operands):
            parts = [compile_expr(o) for o in operands]
            return lambda attrs, source: all(part(attrs, source) for part in parts)
        case Or(operands):
            parts = [compile_expr(o) for o in operands]
            return lambda attrs, source: any(part(attrs, source) for part in parts)
    raise InvariantViolation(f"not an expression: {expr!r}")


def _compiled(rs: RuleSet) -> list[tuple[Rule, Matcher]]:
    compiled = rs._compiled
    if compiled is None:
        compiled = [(rule, compile_expr(rule.when)) for rule in rs.rules]
        object.__setattr__(rs, "_compiled", compiled)
    return compiled


def matches(expr: Expr, attrs: AttributeView, source: str | None = None) -> bool:
    return compile_expr(expr)(attrs, source)


def evaluate_instance(rs: RuleSet, attrs: AttributeView, source: SourceDef | None) -> Decision:
    """Top-to-bottom, first match wins unless the matching rule says continue.

    Block ends evaluation with nothing routed. No match at all, or matches that
    route nowhere, are blocked too (default deny).
    """
    source_name = source.name if source is not None else None
    matched: list[str] = []
    targets: dict[str, RouteTarget] = {}
    morphs: list[MorphOp] = []
    priority: Level | None = None

    for rule, matcher in _compiled(rs):
        if not matcher(attrs, source_name):
            continue
        matched.append(rule.name)
        if rule.blocks:
            return Decision(rs.version, tuple(matched), blocked=True, reason=f"blocked by rule {rule.name}")
        for action in rule.actions:
            match action:
                case Route(names, mode):
                    for name in names:
                        targets.setdefault(name, RouteTarget(name, mode))
                case Morph(ops):
                    morphs.extend(ops)
                case SetPriority(level):
                    priority = priority or level
        if not rule.continue_:
            break

    if not matched:
        return Decision(rs.version, blocked=True, reason=NO_MATCH)
    if not targets:
        return Decision(rs.version, tuple(matched), (), tuple(morphs), priority, blocked=True, reason=NO_ROUTE)
    return Decision(rs.version, tuple(matched), tuple(targets.values()), tuple(morphs), priority)


def resolve_source(rs: RuleSet, calling_ae: str, peer_host: str = "") -> SourceDef | None:
    return next((s for s in rs.sources if s.accepts(calling_ae, peer_host)), None)


class RulesHolder:
    """The active RuleSet. Readers take one reference and evaluate against it."""

    def __init__(self, ruleset: RuleSet):
        self._current = ruleset
        self._lock = threading.Lock()

    @property
    def current(self) -> RuleSet:
        return self._current

    def evaluate(self, attrs: AttributeView, source: SourceDef | None) -> Decision:
        return evaluate_instance(self._current, attrs, source)


def swap_ruleset(holder: RulesHolder, new: RuleSet, rollback: bool = False) -> RuleSet:
    """Install `new`, returning the displaced set.

    A rollback re-stamps an older set with the next version so versions keep increasing.
    """
    with holder._lock:
        current = holder._current
        if new.version <= current.version:
            if not rollback:
                raise StaleVersion(current.version, new.version)
            new = replace(new, version=current.version + 1)
        holder._current = new
    logger.info("rule set version %d -> %d", current.version, new.version)
    return current


_BINARY = {Vr.US: int, Vr.UL: int, Vr.SS: int, Vr.SL: int, Vr.FL: float, Vr.FD: float}


def _set_value(vr: Vr, value: str):
    convert = _BINARY.get(vr)
    if convert is None:
        return value.split("\\") if "\\" in value else value
    return [convert(part) for part in value.split("\\")]


def apply_morphs(ds: DataSet, ops, warnings: list[str] | None = None) -> DataSet:
    """Apply Set / Delete / Copy in order. A copy from an absent tag is skipped with a warning."""
    for op in ops:
        match op:
            case SetOp(tag, vr, value):
                try:
                    ds = ds.set(tag, vr, _set_value(vr, value))
                except (ValueError, struct.error, InvariantViolation, DicomError) as e:
                    message = f"cannot set {tag} {vr}: {e}"
                    logger.warning(message)
                    if warnings is not None:
                        warnings.append(message)
            case DeleteOp(tag):
                ds = ds.delete(tag)
            case CopyOp(source, target):
                element = ds.get(source)
                if element is None:
                    message = str(CopySourceMissing(f"copy {source} -> {target} skipped: {source} absent"))
                    logger.warning(message)
                    if warnings is not None:
                        warnings.append(message)
                    continue
                ds = ds.put(element.with_tag(target))
            case _:
                raise InvariantViolation(f"not a morph op: {op!r}")
    return ds


__all__ = [
    "NO_MATCH",
    "NO_ROUTE",
    "RulesHolder",
    "apply_morphs",
    "compile_expr",
    "evaluate_instance",
    "matches",
    "resolve_source",
    "swap_ruleset",
]
