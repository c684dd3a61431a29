import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvxsim.errors import BadMagic, BadVersion, FrameError, Truncated
from nvxsim.rccom import HEADER_SIZE, MAGIC, ChannelClass, MsgType, WireMessage, decode_frame, encode_frame

SYNC_TYPES = [t for t in MsgType if t is not MsgType.ABORT]

messages = st.one_of(
    st.builds(WireMessage, st.sampled_from(SYNC_TYPES), st.binary(max_size=256), st.just(ChannelClass.SYNC), st.integers(0, 2**64 - 1)),
    st.builds(WireMessage.abort, st.binary(max_size=64), st.integers(0, 2**64 - 1)),
)


def test_empty_state_frame():
    b = encode_frame(WireMessage(MsgType.STATE))
    assert len(b) == HEADER_SIZE == 20
    assert b[:4] == MAGIC == b"NVXM"


def test_header_fields_little_endian():
    b = encode_frame(WireMessage(MsgType.RESULT, b"xyz", seq=0x0102))
    assert b[4:8] == bytes([1, MsgType.RESULT, ChannelClass.SYNC, 0])
    assert b[8:16] == (0x0102).to_bytes(8, "little")
    assert b[16:20] == (3).to_bytes(4, "little")


@given(messages)
def test_round_trip(m):
    data = encode_frame(m)
    assert len(data) == HEADER_SIZE + len(m.payload)
    assert decode_frame(data) == (m, len(data))


@given(messages, messages)
def test_decode_consumes_one_frame(m1, m2):
    data = encode_frame(m1) + encode_frame(m2)
    first, used = decode_frame(data)
    assert first == m1
    assert decode_frame(data[used:])[0] == m2


@given(messages, st.data())
def test_any_cut_is_truncated(m, data):
    raw = encode_frame(m)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(Truncated):
        decode_frame(raw[:cut])


def test_cut_at_byte_19():
    with pytest.raises(Truncated):
        decode_frame(encode_frame(WireMessage(MsgType.STATE))[:19])


def test_bad_magic():
    with pytest.raises(BadMagic):
        decode_frame(b"XXXX" + bytes(16))
    with pytest.raises(BadMagic):
        decode_frame(b"NX")


def test_bad_version():
    with pytest.raises(BadVersion):
        decode_frame(encode_frame(WireMessage(MsgType.BYE), version=9))


def test_unknown_type_byte():
    raw = bytearray(encode_frame(WireMessage(MsgType.BYE)))
    raw[5] = 99
    with pytest.raises(FrameError):
        decode_frame(bytes(raw))


def test_only_abort_on_error_class():
    with pytest.raises(FrameError):
        WireMessage(MsgType.STATE, channel_class=ChannelClass.ERROR)
    with pytest.raises(FrameError):
        WireMessage(MsgType.ABORT)
