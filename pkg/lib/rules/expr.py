"""Match expressions: tokenizer, recursive-descent parser and formatter.

    expr      := term ("or" term)*
    term      := factor ("and" factor)*
    factor    := "not" factor | "(" expr ")" | "true" | "false" | predicate
    predicate := selector op literal
    selector  := keyword | "(gggg,eeee)"
    literal   := "quoted string" | decimal

String literals unescape \\" and \\\\ only, so regular expressions keep their backslashes.
"""

import re
from dataclasses import dataclass
from typing import Mapping

from lib.dicom.dataset import DataSet
from lib.dicom.errors import DicomError
from lib.dicom.tags import Tag
from lib.rules.model import (
    ATTRIBUTES,
    COMPARISONS,
    ORDERINGS,
    And,
    Const,
    Expr,
    Not,
    Or,
    Predicate,
    ValueKind,
    selector_kind,
)
from lib.sections import ConfigSyntaxError

_TOKEN = re.compile(
    r"""
    (?P<space>\s+)
  | (?P<tag>\(\s*[0-9A-Fa-f]{4}\s*,\s*[0-9A-Fa-f]{4}\s*\))
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<op>==|!=|<=|>=|<|>|~)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    column: int


def unescape(body: str) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body) and body[i + 1] in '"\\':
            out.append(body[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def tokenize(text: str, line: int = 1, column: int = 1) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if not match:
            raise ConfigSyntaxError(line, column + pos, f"unexpected character {text[pos]!r}")
        kind = match.lastgroup
        if kind != "space":
            tokens.append(Token(kind, match.group(), column + pos))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str, line: int, column: int):
        self.tokens = tokenize(text, line, column)
        self.pos = 0
        self.line = line
        self.end_column = column + len(text)

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def error(self, message: str, token: Token | None = None) -> ConfigSyntaxError:
        token = token or self.peek()
        return ConfigSyntaxError(self.line, token.column if token else self.end_column, message)

    def take(self, kind: str, text: str | None = None) -> Token:
        token = self.peek()
        if token is None or token.kind != kind or (text is not None and token.text != text):
            wanted = text or kind
            found = token.text if token else "end of expression"
            raise self.error(f"expected {wanted}, found {found!r}")
        self.pos += 1
        return token

    def at_word(self, word: str) -> bool:
        token = self.peek()
        return token is not None and token.kind == "word" and token.text == word

    def parse(self) -> Expr:
        expr = self.expr()
        if self.peek() is not None:
            raise self.error(f"unexpected {self.peek().text!r} after expression")
        return expr

    def expr(self) -> Expr:
        operands = [self.term()]
        while self.at_word("or"):
            self.pos += 1
            operands.append(self.term())
        if len(operands) == 1:
            return operands[0]
        flat = []
        for operand in operands:
            flat.extend(operand.operands if isinstance(operand, Or) else (operand,))
        return Or(tuple(flat))

    def term(self) -> Expr:
        operands = [self.factor()]
        while self.at_word("and"):
            self.pos += 1
            operands.append(self.factor())
        if len(operands) == 1:
            return operands[0]
        flat = []
        for operand in operands:
            flat.extend(operand.operands if isinstance(operand, And) else (operand,))
        return And(tuple(flat))

    def factor(self) -> Expr:
        token = self.peek()
        if token is None:
            raise self.error("expression ends early")
        if token.kind == "word" and token.text == "not":
            self.pos += 1
            return Not(self.factor())
        if token.kind == "lparen":
            self.pos += 1
            inner = self.expr()
            self.take("rparen")
            return inner
        if token.kind == "word" and token.text in ("true", "false"):
            self.pos += 1
            return Const(token.text == "true")
        return self.predicate()

    def predicate(self) -> Predicate:
        token = self.peek()
        if token.kind == "tag":
            self.pos += 1
            selector = str(Tag.parse(token.text))
        elif token.kind == "word":
            if token.text not in ATTRIBUTES:
                known = ", ".join(ATTRIBUTES)
                raise self.error(f"unknown attribute '{token.text}' (known: {known}, or a (gggg,eeee) tag)", token)
            self.pos += 1
            selector = token.text
        else:
            raise self.error(f"expected an attribute, found {token.text!r}", token)

        op_token = self.take("op")
        op = op_token.text
        literal_token = self.peek()
        if literal_token is None or literal_token.kind not in ("string", "number"):
            raise self.error("expected a quoted string or a decimal literal")
        self.pos += 1

        kind = selector_kind(selector)
        if literal_token.kind == "number":
            literal: str | float = float(literal_token.text)
            if op == "~":
                raise self.error(f"'~' needs a quoted regular expression, not {literal_token.text}", literal_token)
            if kind == ValueKind.STRING:
                raise self.error(f"'{selector}' is a string attribute; quote the literal", literal_token)
        else:
            literal = unescape(literal_token.text[1:-1])
            if op in ORDERINGS:
                raise self.error(f"'{op}' needs a decimal literal", literal_token)
            if kind == ValueKind.NUMBER:
                raise self.error(f"'{selector}' is numeric; '{op}' with a string is not allowed", op_token)
            if op == "~":
                try:
                    re.compile(literal)
                except re.error as e:
                    raise self.error(f"bad regular expression: {e}", literal_token) from None
        return Predicate(selector, op, literal)


def parse_expr(text: str, line: int = 1, column: int = 1) -> Expr:
    return _Parser(text, line, column).parse()


_PRECEDENCE = {Or: 1, And: 2, Not: 3}


def format_expr(expr: Expr, parent: int = 0) -> str:
    match expr:
        case Const(value):
            return "true" if value else "false"
        case Predicate(selector, op, literal):
            rendered = repr(literal) if isinstance(literal, float) else quote(literal)
            return f"{selector} {op} {rendered}"
        case Not(operand):
            text = "not " + format_expr(operand, _PRECEDENCE[Not])
        case And(operands):
            text = " and ".join(format_expr(o, _PRECEDENCE[And]) for o in operands)
        case Or(operands):
            text = " or ".join(format_expr(o, _PRECEDENCE[Or]) for o in operands)
    return f"({text})" if _PRECEDENCE[type(expr)] <= parent else text


class AttributeView:
    """What a predicate can see of an instance: selector -> trimmed text, or None when absent."""

    def __init__(self, dataset: DataSet | None = None, values: Mapping[str, str] | None = None):
        self.dataset = dataset
        self.values = dict(values or {})

    @classmethod
    def of(cls, values: Mapping[str, str]) -> "AttributeView":
        return cls(values=values)

    def get(self, selector: str) -> str | None:
        if selector in self.values:
            return self.values[selector]
        if self.dataset is None:
            return None
        if selector in ATTRIBUTES:
            tag = ATTRIBUTES[selector][0]
            if tag is None:
                return None
        else:
            tag = Tag.parse(selector)
        try:
            return self.dataset.text(tag)
        except DicomError:
            return None

    def __repr__(self) -> str:
        return f"AttributeView(values={self.values!r}, dataset={self.dataset!r})"


__all__ = [
    "COMPARISONS",
    "AttributeView",
    "format_expr",
    "parse_expr",
    "quote",
    "tokenize",
    "unescape",
]
