"""Frame codec for the inter-monitor protocol.

Layout (20-byte header, little-endian)::

    0   4s  magic "NVXM"
    4   u8  version
    5   u8  msg_type
    6   u8  channel_class
    7   u8  reserved (0)
    8   u64 seq
    16  u32 payload_len
    20  payload
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from ..errors import BadMagic, BadVersion, FrameError, Truncated

MAGIC = b"NVXM"
VERSION = 1
HEADER = struct.Struct("<4sBBBBQI")
HEADER_SIZE = HEADER.size
assert HEADER_SIZE == 20


class MsgType(enum.IntEnum):
    HELLO = 1
    STATE = 2
    VERDICT = 3
    RESULT = 4
    ABORT = 5
    BYE = 6


class ChannelClass(enum.IntEnum):
    SYNC = 0
    ERROR = 1


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    payload: bytes = b""
    channel_class: ChannelClass = ChannelClass.SYNC
    seq: int = 0

    def __post_init__(self):
        if (self.channel_class is ChannelClass.ERROR) != (self.msg_type is MsgType.ABORT):
            raise FrameError("ABORT travels on the error class and nothing else does")

    @classmethod
    def abort(cls, payload: bytes, seq: int = 0) -> WireMessage:
        return cls(MsgType.ABORT, payload, ChannelClass.ERROR, seq)


def encode_frame(m: WireMessage, version: int = VERSION) -> bytes:
    if len(m.payload) >= 1 << 32:
        raise FrameError("payload too large for a u32 length")
    if not 0 <= m.seq < 1 << 64:
        raise FrameError("seq out of u64 range")
    return HEADER.pack(MAGIC, version, int(m.msg_type), int(m.channel_class), 0, m.seq, len(m.payload)) + m.payload


def decode_frame(data: bytes | bytearray | memoryview, version: int = VERSION) -> tuple[WireMessage, int]:
    """Decode one frame from the front of ``data``; return it and the bytes consumed."""
    if len(data) < 4:
        if bytes(data[:4]) != MAGIC[: len(data)]:
            raise BadMagic(f"bad magic {bytes(data[:4])!r}")
        raise Truncated(f"need {HEADER_SIZE} header bytes, have {len(data)}")
    if bytes(data[:4]) != MAGIC:
        raise BadMagic(f"bad magic {bytes(data[:4])!r}")
    if len(data) < HEADER_SIZE:
        raise Truncated(f"need {HEADER_SIZE} header bytes, have {len(data)}")
    _, ver, mtype, cls, _reserved, seq, n = HEADER.unpack_from(data)
    if ver != version:
        raise BadVersion(f"frame version {ver}, expected {version}")
    if len(data) < HEADER_SIZE + n:
        raise Truncated(f"need {HEADER_SIZE + n} bytes, have {len(data)}")
    try:
        msg = WireMessage(MsgType(mtype), bytes(data[HEADER_SIZE:HEADER_SIZE + n]), ChannelClass(cls), seq)
    except ValueError as e:
        raise FrameError(f"bad header field: {e}") from None
    return msg, HEADER_SIZE + n
