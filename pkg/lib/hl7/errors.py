from lib.errors import FlowgateError


class Hl7Error(FlowgateError):
    pass


class NotHl7(Hl7Error):
    pass


class BadDelimiters(Hl7Error):
    pass


class BadFrame(Hl7Error):
    pass


class Hl7ConnectionRefused(Hl7Error):
    pass


class Hl7Timeout(Hl7Error):
    pass
