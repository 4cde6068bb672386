from lib.errors import FlowgateError


class GatewayError(FlowgateError):
    pass


class ConfigInvalid(GatewayError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class AdminError(GatewayError):
    pass
