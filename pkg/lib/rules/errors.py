from lib.errors import FlowgateError
from lib.sections import ConfigSyntaxError


class RulesError(FlowgateError):
    pass


class UnresolvedReference(RulesError):
    def __init__(self, name: str, where: str = ""):
        self.name = name
        super().__init__(f"unresolved reference '{name}'" + (f" in {where}" if where else ""))


class DuplicateName(RulesError):
    def __init__(self, kind: str, name: str):
        self.kind = kind
        self.name = name
        super().__init__(f"duplicate {kind} name '{name}'")


class StaleVersion(RulesError):
    def __init__(self, current: int, offered: int):
        self.current = current
        self.offered = offered
        super().__init__(f"rule set version {offered} is not newer than the active version {current}")


class CopySourceMissing(RulesError):
    pass


__all__ = [
    "ConfigSyntaxError",
    "CopySourceMissing",
    "DuplicateName",
    "RulesError",
    "StaleVersion",
    "UnresolvedReference",
]
