"""Gateway configuration: one file holding the routing sections plus a [gateway] block.

    [gateway]
    listen_port = 11112
    ae_title = FLOWGATE
    viewer_dests = viewer
    ai_dests = ai_receiver
    hl7_host = 127.0.0.1
    hl7_port = 2575
"""

from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

import app_config
from lib.errors import FlowgateError
from lib.gateway.errors import ConfigInvalid
from lib.net.pdu import AeTitle
from lib.rules.errors import RulesError
from lib.rules.model import Level, RuleSet
from lib.rules.parser import parse_rules
from lib.sections import ConfigSyntaxError, Section, parse_list, parse_sections

GATEWAY_SECTION = "gateway"


class RetryPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_attempts: int = Field(default=3, ge=1, description="Attempts per delivery, the first included")
    base_backoff_ms: int = Field(default=500, ge=0, description="Wait before the first retry")
    multiplier: float = Field(default=2.0, ge=1.0, description="Backoff growth per retry")

    def backoff_s(self, retry: int) -> float:
        """Seconds to wait before retry number `retry` (1-based)."""
        return self.base_backoff_ms * self.multiplier ** (retry - 1) / 1000.0


class GatewayConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    listen_host: str = "127.0.0.1"
    listen_port: int = Field(default=11112, ge=0, le=65535)
    ae_title: str = Field(default="FLOWGATE", description="Called AE title the gateway answers to")
    ae_titles: tuple[str, ...] = Field(default=(), description="Further AE titles served")
    allow_unknown_sources: bool = False
    rules: Optional[Path] = Field(default=None, description="Rules file; the gateway file itself when unset")
    source: Optional[Path] = Field(default=None, description="The file this config was read from")
    template: Optional[Path] = Field(default=None, description="SR to HL7 mapping template; built-in when unset")
    viewer_dests: tuple[str, ...] = ()
    ai_dests: tuple[str, ...] = ()
    hl7_host: str = "127.0.0.1"
    hl7_port: Optional[int] = Field(default=None, ge=1, le=65535, description="Interface engine MLLP port")
    hl7_timeout_s: float = Field(default=10.0, gt=0)
    hl7_strict_layout: bool = False
    retry: RetryPolicy = RetryPolicy()
    ai_timeout_s: float = Field(default=300.0, gt=0)
    study_idle_s: float = Field(default=5.0, gt=0)
    priority_threshold: Level = Level.HIGH
    evaluation_type: str = "MONAI"
    sending_app: str = "MONAI_TEST"
    receiving_app: str = "HIS_TEST"
    processing_id: str = "T"
    quarantine_dir: Path
    dead_letter_dir: Path
    audit_log: Path
    admin_port: int = Field(default=11180, ge=0, le=65535)
    max_pdu: int = Field(default=16384, ge=0)
    seed: Optional[int] = Field(default=None, description="Seeds UIDs, control ids and clocks for repeatable runs")

    @field_validator("ae_title")
    @classmethod
    def _valid_ae(cls, value: str) -> str:
        try:
            return AeTitle(value).value
        except FlowgateError as e:
            raise ValueError(str(e)) from None

    @property
    def rules_path(self) -> Optional[Path]:
        return self.rules or self.source

    @property
    def served_titles(self) -> list[str]:
        return [self.ae_title, *self.ae_titles]


_LIST_KEYS = {"ae_titles", "viewer_dests", "ai_dests"}
_PATH_KEYS = {"rules", "template", "quarantine_dir", "dead_letter_dir", "audit_log"}
_RETRY_KEYS = {"retry_max": "max_attempts", "retry_backoff_ms": "base_backoff_ms", "retry_multiplier": "multiplier"}


def _default_dir(key: app_config.ConfigKeys, fallback: str) -> Path:
    if app_config.is_initialized():
        return app_config.get_path(key, fallback)
    return Path(fallback)


def _gateway_values(section: Section, base: Path) -> dict:
    values: dict = {}
    retry: dict = {}
    for entry in section.entries:
        key, raw = entry.key, entry.value.strip()
        if key in _RETRY_KEYS:
            retry[_RETRY_KEYS[key]] = raw
        elif key in _LIST_KEYS:
            values[key] = tuple(parse_list(raw))
        elif key in _PATH_KEYS:
            path = Path(raw)
            values[key] = path if path.is_absolute() else base / path
        elif key in GatewayConfig.model_fields and key not in ("retry", "source"):
            values[key] = raw
        else:
            raise entry.error(f"unknown [gateway] key '{key}'")
    if retry:
        values["retry"] = retry
    return values


def parse_gateway_config(text: str, path=None, version: int = 1) -> tuple[GatewayConfig, RuleSet]:
    """Parse the gateway file; every problem surfaces as ConfigInvalid naming its line."""
    base = Path(path).parent if path is not None else Path(".")
    try:
        sections = [s for s in parse_sections(text) if s.kind == GATEWAY_SECTION]
        if len(sections) != 1:
            raise ConfigInvalid(f"expected exactly one [gateway] section, found {len(sections)}")
        section = sections[0]
        values = _gateway_values(section, base)
    except ConfigSyntaxError as e:
        raise ConfigInvalid(e.message, e.line) from e

    values["source"] = Path(path) if path is not None else None
    values.setdefault("quarantine_dir", _default_dir(app_config.ConfigKeys.DIR_QUARANTINE, "./datawork/quarantine"))
    values.setdefault("dead_letter_dir", _default_dir(app_config.ConfigKeys.DIR_DEAD_LETTER, "./datawork/dead_letter"))
    values.setdefault(
        "audit_log", _default_dir(app_config.ConfigKeys.DIR_AUDIT, "./datawork/audit") / "audit.ndjson"
    )
    try:
        config = GatewayConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ConfigInvalid(f"[gateway] {field}: {first['msg']}", section.line) from e

    ruleset = load_rules(config, None if config.rules else text, version)

    for key in ("viewer_dests", "ai_dests"):
        for name in getattr(config, key):
            if ruleset.destination(name) is None:
                raise ConfigInvalid(f"[gateway] {key} names unknown destination '{name}'", section.line)

    for directory in (config.quarantine_dir, config.dead_letter_dir, config.audit_log.parent):
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigInvalid(f"cannot create {directory}: {e}") from e
    return config, ruleset


def load_rules(config: GatewayConfig, text: str | None = None, version: int = 1) -> RuleSet:
    """Parse the rule sections, reading the rules file when no text is given."""
    where = config.rules_path or "<config>"
    if text is None:
        if config.rules_path is None:
            raise ConfigInvalid("no rules file to read")
        try:
            text = config.rules_path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigInvalid(f"cannot read rules file {where}: {e}") from e
    try:
        return parse_rules(text, version, extra_sections=(GATEWAY_SECTION,))
    except ConfigSyntaxError as e:
        raise ConfigInvalid(f"{where}: {e.message}", e.line) from e
    except RulesError as e:
        raise ConfigInvalid(f"{where}: {e}") from e


def read_gateway_config(path) -> tuple[GatewayConfig, RuleSet]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigInvalid(f"cannot read gateway config {path}: {e}") from e
    return parse_gateway_config(text, path)
