from lib.errors import FlowgateError
from lib.sections import ConfigSyntaxError


class SrError(FlowgateError):
    pass


class NotAnSr(SrError):
    pass


class MalformedContentSequence(SrError):
    pass


class TemplateSyntaxError(ConfigSyntaxError, SrError):
    pass


class DuplicateTarget(SrError):
    def __init__(self, field_id: str, line: int):
        self.field_id = field_id
        self.line = line
        super().__init__(f"line {line}: target '{field_id}' is already mapped")
