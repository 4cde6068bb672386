from lib.errors import FlowgateError


class DicomError(FlowgateError):
    pass


class MissingMagic(DicomError):
    pass


class UnsupportedTransferSyntax(DicomError):
    def __init__(self, uid: str, detail: str = ""):
        self.uid = uid
        message = f"unsupported transfer syntax {uid}"
        super().__init__(f"{message}: {detail}" if detail else message)


class TruncatedElement(DicomError):
    pass


class MalformedElement(DicomError):
    pass


class TypeMismatch(DicomError):
    pass
