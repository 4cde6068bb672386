from lib.errors import FlowgateError


class SimError(FlowgateError):
    pass


class BadBehavior(SimError):
    pass


class ScenarioInvalid(SimError):
    pass
