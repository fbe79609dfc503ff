"""Frame codec and message constructors."""

import socket
import struct
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spacefarm import wire
from spacefarm.errors import FrameTooLarge, ProtocolMismatch, SessionClosed

json_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(2**53), max_value=2**53)
    | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=40),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=12), children, max_size=4),
    max_leaves=24,
)


@given(st.dictionaries(st.text(max_size=12), json_values, max_size=6))
def test_frame_roundtrip(message):
    assert wire.decode_frame(wire.encode_frame(message)) == message


def test_frame_layout_is_length_prefixed_json():
    frame = wire.encode_frame({"op": "x"})
    (length,) = struct.unpack(">I", frame[:4])
    assert length == len(frame) - 4
    assert frame[4:].decode("utf-8") == '{"op":"x"}'


def test_encode_rejects_oversized_body():
    with pytest.raises(FrameTooLarge):
        wire.encode_frame({"blob": "x" * (wire.MAX_FRAME + 16)})


def test_decode_rejects_oversized_header_before_reading_body():
    header = struct.pack(">I", wire.MAX_FRAME + 1)
    with pytest.raises(FrameTooLarge):
        wire.decode_frame(header + b"")


def test_decode_rejects_truncated_frames():
    frame = wire.encode_frame({"a": 1})
    with pytest.raises(ValueError):
        wire.decode_frame(frame[:-1])
    with pytest.raises(ValueError):
        wire.decode_frame(b"\x00\x00")


def test_send_and_read_over_socketpair():
    left, right = socket.socketpair()
    try:
        wire.send_frame(left, {"req_id": 1, "op": "ping", "params": {}})
        wire.send_frame(left, {"req_id": 2, "op": "pong", "params": {"n": 7}})
        assert wire.read_frame(right)["op"] == "ping"
        assert wire.read_frame(right)["params"] == {"n": 7}
    finally:
        left.close()
        right.close()


def test_read_frame_raises_when_peer_closes():
    left, right = socket.socketpair()
    left.close()
    try:
        with pytest.raises(SessionClosed):
            wire.read_frame(right)
    finally:
        right.close()


def test_recv_exact_reassembles_partial_sends():
    left, right = socket.socketpair()
    payload = bytes(range(256)) * 8
    try:

        def drip():
            for i in range(0, len(payload), 100):
                left.sendall(payload[i : i + 100])

        thread = threading.Thread(target=drip, daemon=True)
        thread.start()
        assert wire.recv_exact(right, len(payload)) == payload
        thread.join(timeout=5)
    finally:
        left.close()
        right.close()


def test_hello_check():
    wire.check_hello(wire.hello_frame())
    with pytest.raises(ProtocolMismatch):
        wire.check_hello({"hello": "otherproto/9"})
    with pytest.raises(ProtocolMismatch):
        wire.check_hello({})


def test_message_shapes():
    req = wire.request(3, "space.read", {"timeout_ms": 0})
    assert req == {"req_id": 3, "op": "space.read", "params": {"timeout_ms": 0}}
    ok = wire.ok_response(3, {"entry": None})
    assert ok["ok"] is True and ok["req_id"] == 3
    err = wire.error_response(3, "BAD_REQUEST", "nope")
    assert err["ok"] is False and err["error"]["code"] == "BAD_REQUEST"
    evt = wire.event("sub-1", {"seq": 9})
    assert evt == {"subscription_id": "sub-1", "payload": {"seq": 9}}
