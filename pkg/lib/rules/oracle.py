"""Reference evaluator: interprets the expression tree afresh on every call."""

import re

from lib.rules.expr import AttributeView
from lib.rules.model import (
    And,
    Block,
    Const,
    Decision,
    Morph,
    Not,
    Or,
    Predicate,
    Route,
    RouteTarget,
    RuleSet,
    SetPriority,
    SourceDef,
    ValueKind,
    selector_kind,
)


def _lookup(p: Predicate, attrs: AttributeView, source: SourceDef | None):
    if p.selector == "source":
        return source.name if source is not None else None
    return attrs.get(p.selector)


def _holds(p: Predicate, attrs: AttributeView, source: SourceDef | None) -> bool:
    raw = _lookup(p, attrs, source)
    if raw is None:
        return False

    if isinstance(p.literal, float) or selector_kind(p.selector) == ValueKind.NUMBER:
        try:
            value = float(raw.split("\\")[0].strip())
        except ValueError:
            return False
        literal = float(p.literal)
        if p.op == "==":
            return value == literal
        if p.op == "!=":
            return value != literal
        if p.op == "<":
            return value < literal
        if p.op == "<=":
            return value <= literal
        if p.op == ">":
            return value > literal
        if p.op == ">=":
            return value >= literal
        return False

    if p.op == "~":
        return re.search(p.literal, raw) is not None
    if p.op == "==":
        return raw == p.literal
    if p.op == "!=":
        return raw != p.literal
    return False


def _truth(expr, attrs: AttributeView, source: SourceDef | None) -> bool:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Predicate):
        return _holds(expr, attrs, source)
    if isinstance(expr, Not):
        return not _truth(expr.operand, attrs, source)
    if isinstance(expr, And):
        for operand in expr.operands:
            if not _truth(operand, attrs, source):
                return False
        return True
    if isinstance(expr, Or):
        for operand in expr.operands:
            if _truth(operand, attrs, source):
                return True
        return False
    raise TypeError(f"not an expression: {expr!r}")


def oracle_evaluate(rs: RuleSet, attrs: AttributeView, source: SourceDef | None) -> Decision:
    matched = []
    targets = []
    seen = set()
    morphs = []
    priority = None

    for rule in rs.rules:
        if not _truth(rule.when, attrs, source):
            continue
        matched.append(rule.name)

        blocked = False
        for action in rule.actions:
            if isinstance(action, Block):
                blocked = True
        if blocked:
            return Decision(
                ruleset_version=rs.version,
                matched=tuple(matched),
                blocked=True,
                reason="blocked by rule " + rule.name,
            )

        for action in rule.actions:
            if isinstance(action, Route):
                for name in action.destinations:
                    if name not in seen:
                        seen.add(name)
                        targets.append(RouteTarget(name, action.mode))
            elif isinstance(action, Morph):
                for op in action.ops:
                    morphs.append(op)
            elif isinstance(action, SetPriority) and priority is None:
                priority = action.level

        if not rule.continue_:
            break

    if len(matched) == 0:
        return Decision(ruleset_version=rs.version, blocked=True, reason="no-match")
    if len(targets) == 0:
        return Decision(
            ruleset_version=rs.version,
            matched=tuple(matched),
            morphs=tuple(morphs),
            priority=priority,
            blocked=True,
            reason="no-route",
        )
    return Decision(
        ruleset_version=rs.version,
        matched=tuple(matched),
        targets=tuple(targets),
        morphs=tuple(morphs),
        priority=priority,
    )
