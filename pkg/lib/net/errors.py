from lib.errors import FlowgateError


class DimseError(FlowgateError):
    pass


class PduError(DimseError):
    pass


class UnknownPduType(PduError):
    def __init__(self, pdu_type: int):
        self.pdu_type = pdu_type
        super().__init__(f"unknown PDU type {pdu_type:#04x}")


class LengthMismatch(PduError):
    pass


class OversizedPdu(PduError):
    pass


class ConnectionClosed(DimseError):
    pass


class ConnectionRefused(DimseError):
    pass


class AssociationRejected(DimseError):
    def __init__(self, result: int, source: int, reason: int):
        self.result = result
        self.source = source
        self.reason = reason
        super().__init__(f"association rejected (result {result}, source {source}, reason {reason})")


class PeerAbort(DimseError):
    pass


class StoreFailed(DimseError):
    def __init__(self, sop_instance_uid: str, status: int):
        self.sop_instance_uid = sop_instance_uid
        self.status = status
        super().__init__(f"C-STORE of {sop_instance_uid} returned status {status:#06x}")


class BindFailed(DimseError):
    pass
