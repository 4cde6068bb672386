import hashlib
import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lib.dicom.codec import serialize_dataset
from lib.dicom.tags import Vr
from lib.dicom.uids import CT_IMAGE_STORAGE, EXPLICIT_VR_LE, IMPLICIT_VR_LE, MR_IMAGE_STORAGE
from lib.errors import InvariantViolation
from lib.net.association import LocalConfig, negotiate_accept
from lib.net.dimse import CStoreExchange, MessageAssembler, Status, encode_command, fragment
from lib.net.errors import AssociationRejected, ConnectionRefused, LengthMismatch, PduError, UnknownPduType
from lib.net.pdu import (
    Abort,
    AeTitle,
    AssociateAc,
    AssociateRj,
    AssociateRq,
    DataTf,
    Pdv,
    PresentationContext,
    ReleaseRp,
    ReleaseRq,
    decode_pdu,
    encode_pdu,
)
from lib.net.scp import ListenConfig, scp_serve
from lib.net.scu import scu_echo, scu_store
from tests.conftest import ct_dataset, ct_file

_ae = st.text(alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-", min_size=1, max_size=16).map(AeTitle)
_uid = st.lists(st.integers(0, 9999), min_size=2, max_size=6).map(lambda parts: ".".join(map(str, parts)))
_byte = st.integers(0, 255)
_context_id = st.integers(0, 127).map(lambda i: 2 * i + 1)


@st.composite
def associate_rq(draw):
    contexts = tuple(
        PresentationContext(cid, draw(_uid), tuple(draw(st.lists(_uid, min_size=1, max_size=3))))
        for cid in draw(st.lists(_context_id, max_size=4, unique=True))
    )
    return AssociateRq(
        draw(_ae),
        draw(_ae),
        contexts,
        max_pdu_length=draw(st.integers(0, 2**32 - 1)),
        implementation_version=draw(st.none() | st.text(alphabet="ABC_0123", min_size=1, max_size=16)),
    )


@st.composite
def associate_ac(draw):
    contexts = tuple(
        PresentationContext(cid, "", (draw(_uid),), draw(st.sampled_from([0, 3, 4])))
        for cid in draw(st.lists(_context_id, max_size=4, unique=True))
    )
    return AssociateAc(draw(_ae), draw(_ae), contexts, max_pdu_length=draw(st.integers(0, 2**32 - 1)))


_pdv = st.builds(Pdv, _byte, st.booleans(), st.booleans(), st.binary(max_size=64))

pdus = st.one_of(
    associate_rq(),
    associate_ac(),
    st.builds(AssociateRj, _byte, _byte, _byte),
    st.lists(_pdv, max_size=4).map(lambda pdvs: DataTf(tuple(pdvs))),
    st.just(ReleaseRq()),
    st.just(ReleaseRp()),
    st.builds(Abort, _byte, _byte),
)


@settings(max_examples=300, deadline=None)
@given(pdu=pdus)
def test_pdu_round_trip(pdu):
    data = encode_pdu(pdu)
    assert int.from_bytes(data[2:6], "big") == len(data) - 6
    assert decode_pdu(data) == pdu


def test_fixed_layouts():
    rq = AssociateRq(AeTitle("STORE"), AeTitle("SCU"), ())
    assert encode_pdu(rq)[0] == 0x01
    assert len(encode_pdu(ReleaseRq())) == 10
    assert encode_pdu(ReleaseRp())[0] == 0x06
    assert AeTitle("AB").encode() == b"AB" + b" " * 14


def test_decode_errors():
    with pytest.raises(UnknownPduType):
        decode_pdu(bytes([0x09, 0, 0, 0, 0, 4, 0, 0, 0, 0]))
    with pytest.raises(LengthMismatch):
        decode_pdu(b"\x05\x00\x00")
    with pytest.raises(LengthMismatch):
        decode_pdu(encode_pdu(ReleaseRq())[:-1])


@pytest.mark.parametrize("value", ["", "   ", "lower", "A" * 17, "BAD!"])
def test_ae_title_rejects(value):
    with pytest.raises(InvariantViolation):
        AeTitle(value)


def test_presentation_context_ids_are_odd():
    with pytest.raises(InvariantViolation):
        PresentationContext(2, CT_IMAGE_STORAGE, (EXPLICIT_VR_LE,))


LOCAL = LocalConfig(ae_titles=frozenset({"STORE"}))


def test_negotiate_unknown_called():
    reply = negotiate_accept(AssociateRq(AeTitle("NOPE"), AeTitle("SCU"), ()), LOCAL)
    assert isinstance(reply, AssociateRj)
    assert reply.reason == AssociateRj.CALLED_AE_NOT_RECOGNIZED


def test_negotiate_picks_first_supported_syntax():
    rq = AssociateRq(
        AeTitle("STORE"),
        AeTitle("SCU"),
        (
            PresentationContext(1, CT_IMAGE_STORAGE, (EXPLICIT_VR_LE, IMPLICIT_VR_LE)),
            PresentationContext(3, MR_IMAGE_STORAGE, ("1.2.840.10008.1.2.4.70",)),
            PresentationContext(5, "1.2.3.4.5", (EXPLICIT_VR_LE,)),
        ),
    )
    reply = negotiate_accept(rq, LOCAL)
    assert isinstance(reply, AssociateAc)
    by_id = {ctx.id: ctx for ctx in reply.contexts}
    assert by_id[1].accepted and by_id[1].transfer_syntaxes == (EXPLICIT_VR_LE,)
    assert by_id[3].result == PresentationContext.TRANSFER_SYNTAXES_NOT_SUPPORTED
    assert by_id[5].result == PresentationContext.ABSTRACT_SYNTAX_NOT_SUPPORTED


def test_negotiate_calling_filter():
    local = LocalConfig(ae_titles=frozenset({"STORE"}), accept_calling=lambda calling, host: calling == "KNOWN")
    rq = AssociateRq(AeTitle("STORE"), AeTitle("STRANGER"), ())
    reply = negotiate_accept(rq, local)
    assert isinstance(reply, AssociateRj)
    assert reply.reason == AssociateRj.CALLING_AE_NOT_RECOGNIZED


def test_reassembly_from_five_fragments():
    ds = ct_dataset().set("PixelData", Vr.OW, bytes(range(256)) * 16)
    data = serialize_dataset(ds, EXPLICIT_VR_LE)
    command = encode_command(CStoreExchange(7, CT_IMAGE_STORAGE, "1.2.3").request())
    max_pdu = -(-len(data) // 5) + 6
    pieces = list(fragment(1, command, True, 1024)) + list(fragment(1, data, False, max_pdu))
    assert len([p for p in pieces if not p.pdvs[0].is_command]) == 5

    assembler = MessageAssembler()
    messages = [m for pdu in pieces for pdv in pdu.pdvs if (m := assembler.feed(pdv)) is not None]
    assert len(messages) == 1
    assert messages[0].data == data
    assert messages[0].command.integer("MessageID") == 7


@pytest.mark.parametrize("max_pdu", [1024, 4096, 16384])
def test_fragments_respect_max_pdu(max_pdu):
    payload = bytes(50_000)
    pieces = list(fragment(1, payload, False, max_pdu))
    assert all(len(encode_pdu(p)) - 6 <= max_pdu for p in pieces)
    assert b"".join(p.pdvs[0].data for p in pieces) == payload
    assert [p.pdvs[0].is_last for p in pieces].count(True) == 1


class Recorder:
    def __init__(self, statuses=None):
        self.files = []
        self.statuses = list(statuses or [])
        self.lock = threading.Lock()

    def __call__(self, meta, file):
        with self.lock:
            self.files.append((meta, file))
            return self.statuses.pop(0) if self.statuses else Status.SUCCESS


def test_store_round_trip():
    recorder = Recorder()
    with scp_serve(ListenConfig(port=0, ae_titles=["STORE"]), recorder) as server:
        sent = ct_file()
        assert scu_store(("127.0.0.1", server.port), "SCU", "STORE", [sent]) == [Status.SUCCESS]
    meta, received = recorder.files[0]
    assert meta.calling_ae == "SCU" and meta.called_ae == "STORE"
    assert received.dataset == sent.dataset
    assert received.sop_instance_uid == sent.sop_instance_uid
    assert received.transfer_syntax == EXPLICIT_VR_LE


def test_per_file_status_pass_through():
    recorder = Recorder([Status.SUCCESS, Status.OUT_OF_RESOURCES, Status.SUCCESS])
    files = [ct_file(f"1.2.3.{i}") for i in range(3)]
    with scp_serve(ListenConfig(port=0, ae_titles=["STORE"]), recorder) as server:
        statuses = scu_store(("127.0.0.1", server.port), "SCU", "STORE", files)
    assert statuses == [0x0000, 0xA700, 0x0000]
    assert [f.sop_instance_uid for _, f in recorder.files] == ["1.2.3.0", "1.2.3.1", "1.2.3.2"]


def test_handler_failure_is_cannot_understand():
    def explode(meta, file):
        raise RuntimeError("boom")

    with scp_serve(ListenConfig(port=0, ae_titles=["STORE"]), explode) as server:
        endpoint = ("127.0.0.1", server.port)
        assert scu_store(endpoint, "SCU", "STORE", [ct_file()]) == [Status.CANNOT_UNDERSTAND]
        assert scu_echo(endpoint, "SCU", "STORE") == Status.SUCCESS


@pytest.mark.parametrize("max_pdu", [1024, 4096, 16384])
def test_transfer_is_fragmentation_invariant(max_pdu):
    recorder = Recorder()
    pixels = (np.arange(1_000_000, dtype=np.uint32) % 251).astype("<u2").tobytes()
    sent = ct_file(transfer_syntax=IMPLICIT_VR_LE).with_dataset(ct_dataset().set("PixelData", Vr.OW, pixels))
    with scp_serve(ListenConfig(port=0, ae_titles=["STORE"], max_pdu=max_pdu), recorder) as server:
        assert scu_store(("127.0.0.1", server.port), "SCU", "STORE", [sent], max_pdu=max_pdu) == [0]
    received = recorder.files[0][1]
    digest = hashlib.sha256(serialize_dataset(received.dataset, IMPLICIT_VR_LE)).hexdigest()
    assert digest == hashlib.sha256(serialize_dataset(sent.dataset, IMPLICIT_VR_LE)).hexdigest()
    assert len(received.dataset["PixelData"].raw) == 2_000_000
    assert recorder.files[0][1].transfer_syntax == IMPLICIT_VR_LE


def test_concurrent_associations():
    recorder = Recorder()
    errors = []
    with scp_serve(ListenConfig(port=0, ae_titles=["STORE"]), recorder) as server:

        def send(prefix):
            try:
                files = [ct_file(f"{prefix}.{i}") for i in range(5)]
                assert scu_store(("127.0.0.1", server.port), "SCU", "STORE", files) == [0] * 5
            except Exception as e:
                errors.append(e)

        threads = [threading.Thread(target=send, args=(f"1.2.{n}",)) for n in (1, 2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30)
    assert not errors
    assert sorted(f.sop_instance_uid for _, f in recorder.files) == sorted(
        f"1.2.{n}.{i}" for n in (1, 2) for i in range(5)
    )


def test_rejections(free_port):
    with scp_serve(ListenConfig(port=0, ae_titles=["STORE"]), Recorder()) as server:
        with pytest.raises(AssociationRejected):
            scu_store(("127.0.0.1", server.port), "SCU", "NOPE", [ct_file()])
    with pytest.raises(ConnectionRefused):
        scu_store(("127.0.0.1", free_port), "SCU", "STORE", [ct_file()], timeout=2)


def mangled_rq() -> bytes:
    rq = AssociateRq(AeTitle("STORE"), AeTitle("SCU"), (PresentationContext(1, CT_IMAGE_STORAGE, (EXPLICIT_VR_LE,)),))
    data = encode_pdu(rq)
    at = data.index(CT_IMAGE_STORAGE.encode())
    return data[:at] + b"\xff" + data[at + 1:]


def test_non_ascii_uid_is_a_pdu_error():
    with pytest.raises(PduError):
        decode_pdu(mangled_rq())


def test_garbled_request_is_aborted():
    with scp_serve(ListenConfig(port=0, ae_titles=["STORE"]), Recorder()) as server:
        with socket.create_connection(("127.0.0.1", server.port), timeout=5) as sock:
            sock.sendall(mangled_rq())
            pdu_type, _, length = struct.unpack(">BBI", sock.recv(6))
        assert pdu_type == 0x07
        assert length == 4
        assert scu_echo(("127.0.0.1", server.port), "SCU", "STORE") == Status.SUCCESS
