"""Inter-monitor messaging.

Endpoints are URLs: ``mem://<name>`` for in-process pairs and
``tcp://<host>:<port>`` for stream sockets. The leader listens, followers
connect, and both sides exchange HELLO before anything else.
"""

from __future__ import annotations

from urllib.parse import urlsplit

from .channel import PROTOCOL_VERSION, Channel, HelloInfo, decode_hello, encode_hello, handshake
from .frame import HEADER_SIZE, MAGIC, ChannelClass, MsgType, WireMessage, decode_frame, encode_frame
from .memory import MemoryChannel, MemoryListener, connect_memory, memory_pair, unique_memory_name
from .stubs import EnetChannel, RdmaChannel
from .tcp import TcpChannel, TcpListener, connect_tcp


def _split(endpoint: str):
    u = urlsplit(endpoint)
    if u.scheme == "mem":
        return "mem", u.netloc + u.path
    if u.scheme == "tcp":
        return "tcp", (u.hostname or "127.0.0.1", u.port or 0)
    if u.scheme == "enet":
        EnetChannel()
    if u.scheme == "rdma":
        RdmaChannel()
    raise ValueError(f"unsupported endpoint {endpoint!r}")


def listen(endpoint: str):
    """Bind a listener; ``tcp://host:0`` picks a free port (see ``.endpoint``)."""
    scheme, where = _split(endpoint)
    if scheme == "mem":
        return MemoryListener(where)
    return TcpListener(*where)


def connect(endpoint: str, timeout: float = 10.0) -> Channel:
    scheme, where = _split(endpoint)
    if scheme == "mem":
        return connect_memory(where, timeout)
    return connect_tcp(*where, timeout=timeout)


def open_channel(endpoint: str, role: str, platform_digest: bytes, *, listener=None, timeout: float = 10.0) -> Channel:
    """Connected, handshaken channel. Leaders accept on ``listener`` (or a fresh
    one bound to ``endpoint``); followers connect to ``endpoint``."""
    if role == "leader":
        lst = listener if listener is not None else listen(endpoint)
        try:
            ch = lst.accept(timeout)
        finally:
            if listener is None:
                lst.close()
    elif role == "follower":
        ch = connect(endpoint, timeout)
    else:
        raise ValueError(f"role must be leader or follower, not {role!r}")
    handshake(ch, role, platform_digest, timeout=timeout)
    return ch


__all__ = [
    "Channel", "ChannelClass", "MsgType", "WireMessage", "HelloInfo", "PROTOCOL_VERSION",
    "HEADER_SIZE", "MAGIC", "encode_frame", "decode_frame", "encode_hello", "decode_hello",
    "handshake", "listen", "connect", "open_channel", "memory_pair", "unique_memory_name",
    "MemoryChannel", "MemoryListener", "TcpChannel", "TcpListener",
]
