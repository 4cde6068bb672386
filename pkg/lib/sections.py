"""Line-oriented section grammar shared by every flowgate config file.

    # comment
    [kind name]
    key = value

Used by routing rules, the [gateway] section, MAP graph files and scenario files.
Keys may repeat within a section (morph lines, for instance); order is kept.
"""

import re
from dataclasses import dataclass, field

from lib.errors import FlowgateError

IDENTIFIER = r"[A-Za-z_][A-Za-z0-9_\-]*"

_HEADER = re.compile(rf"^\[\s*({IDENTIFIER})(?:\s+({IDENTIFIER}))?\s*\]$")
_ENTRY = re.compile(rf"^({IDENTIFIER})\s*=\s*(.*)$")


class ConfigSyntaxError(FlowgateError):
    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"line {line}, column {column}: {message}")


@dataclass(frozen=True)
class Entry:
    key: str
    value: str
    line: int
    column: int

    def error(self, message: str, offset: int = 0) -> ConfigSyntaxError:
        return ConfigSyntaxError(self.line, self.column + offset, message)


@dataclass
class Section:
    kind: str
    name: str | None
    line: int
    entries: list[Entry] = field(default_factory=list)

    def get(self, key: str) -> Entry | None:
        found = [e for e in self.entries if e.key == key]
        return found[-1] if found else None

    def values(self) -> dict[str, str]:
        return {e.key: e.value for e in self.entries}

    def error(self, message: str) -> ConfigSyntaxError:
        return ConfigSyntaxError(self.line, 1, message)


def strip_comment(line: str) -> str:
    """Drop a '#' comment unless the '#' sits inside a double-quoted string."""
    in_quote = False
    escaped = False
    for i, ch in enumerate(line):
        if escaped:
            escaped = False
        elif ch == "\\" and in_quote:
            escaped = True
        elif ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return line[:i]
    return line


def parse_sections(text: str) -> list[Section]:
    sections: list[Section] = []
    current: Section | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = strip_comment(raw).rstrip()
        stripped = body.lstrip()
        if not stripped:
            continue
        indent = len(body) - len(stripped)

        if stripped.startswith("["):
            match = _HEADER.match(stripped)
            if not match:
                raise ConfigSyntaxError(lineno, indent + 1, f"malformed section header {stripped!r}")
            current = Section(kind=match.group(1), name=match.group(2), line=lineno)
            sections.append(current)
            continue

        match = _ENTRY.match(stripped)
        if not match:
            raise ConfigSyntaxError(lineno, indent + 1, f"expected 'key = value', got {stripped!r}")
        if current is None:
            raise ConfigSyntaxError(lineno, indent + 1, "entry outside of any section")
        current.entries.append(
            Entry(
                key=match.group(1),
                value=match.group(2).strip(),
                line=lineno,
                column=indent + match.start(2) + 1,
            )
        )

    return sections


def parse_bool(entry: Entry) -> bool:
    lowered = entry.value.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise entry.error(f"expected true or false for '{entry.key}', got {entry.value!r}")


def parse_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]
