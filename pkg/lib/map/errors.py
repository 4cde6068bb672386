from lib.errors import FlowgateError


class MapError(FlowgateError):
    pass


class GraphError(MapError):
    pass


class CycleDetected(GraphError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__(f"operator graph has a cycle: {' -> '.join(cycle)}")


class DanglingInput(GraphError):
    pass


class PortTypeMismatch(GraphError):
    pass


class OperatorFailed(MapError):
    def __init__(self, name: str, cause: Exception):
        self.name = name
        self.cause = cause
        super().__init__(f"operator {name} failed: {type(cause).__name__}: {cause}")


class NoStudiesFound(MapError):
    pass


class NoMatchingSeries(MapError):
    pass


class InconsistentDimensions(MapError):
    pass


class NonUniformSpacing(MapError):
    pass


class EmptyVolume(MapError):
    pass


class WriteFailed(MapError):
    pass
