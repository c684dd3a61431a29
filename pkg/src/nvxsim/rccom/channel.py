"""Transport-independent channel: per-class FIFO inboxes, seq stamping and
the HELLO handshake. Transports subclass :class:`Channel` and provide
``_transmit`` plus a way to call ``_feed`` / ``_remote_closed``."""

from __future__ import annotations

import struct
import threading
from collections import Counter, deque
from dataclasses import dataclass, replace

from ..errors import FrameError, PeerDisconnected, ProtocolError, Truncated, VersionMismatch
from .frame import ChannelClass, MsgType, WireMessage, decode_frame, encode_frame

PROTOCOL_VERSION = 1
_HELLO = struct.Struct("<HB32s")
ROLES = ("leader", "follower")


@dataclass(frozen=True)
class HelloInfo:
    version: int
    role: str
    platform_digest: bytes


def encode_hello(version: int, role: str, digest: bytes) -> bytes:
    return _HELLO.pack(version, ROLES.index(role), digest[:32].ljust(32, b"\0"))


def decode_hello(payload: bytes) -> HelloInfo:
    if len(payload) != _HELLO.size:
        raise ProtocolError(f"HELLO payload is {len(payload)} bytes")
    version, role, digest = _HELLO.unpack(payload)
    if role >= len(ROLES):
        raise ProtocolError(f"unknown role code {role}")
    return HelloInfo(version, ROLES[role], digest)


class Channel:
    """A reliable, ordered, full-duplex link to one peer monitor."""

    def __init__(self, name: str = ""):
        self.name = name
        self._cv = threading.Condition()
        self._inbox = {ChannelClass.SYNC: deque(), ChannelClass.ERROR: deque()}
        self._send_lock = threading.Lock()
        self._send_seq = {ChannelClass.SYNC: 0, ChannelClass.ERROR: 0}
        self._recv_seq = {ChannelClass.SYNC: -1, ChannelClass.ERROR: -1}
        self._rx = bytearray()
        self._remote_gone = False
        self._closed = False
        self._send_done = False
        self._fault: Exception | None = None
        self.hello_done = False
        self.peer: HelloInfo | None = None
        self.sent = Counter()
        self.received = Counter()

    # transport hooks

    def _transmit(self, data: bytes):
        raise NotImplementedError

    def _close_transport(self):
        pass

    def _half_close(self):
        pass

    def _feed(self, data: bytes):
        with self._cv:
            self._rx += data
            while self._rx:
                try:
                    msg, used = decode_frame(self._rx)
                except Truncated:
                    break
                except FrameError as e:
                    self._fault = e
                    self._rx.clear()
                    break
                del self._rx[:used]
                cls = msg.channel_class
                if msg.seq <= self._recv_seq[cls]:
                    self._fault = ProtocolError(f"seq {msg.seq} after {self._recv_seq[cls]} on {cls.name}")
                    break
                self._recv_seq[cls] = msg.seq
                self._inbox[cls].append(msg)
            self._cv.notify_all()

    def _remote_closed(self):
        with self._cv:
            self._remote_gone = True
            self._cv.notify_all()

    # public API

    @property
    def connected(self) -> bool:
        return not (self._remote_gone or self._closed)

    def send(self, m: WireMessage) -> WireMessage:
        if self._closed or self._send_done:
            raise PeerDisconnected(f"{self.name}: channel closed for sending")
        if not self.hello_done and m.msg_type is not MsgType.HELLO:
            raise ProtocolError(f"{self.name}: {m.msg_type.name} before HELLO exchange")
        with self._send_lock:
            cls = m.channel_class
            stamped = replace(m, seq=self._send_seq[cls])
            self._transmit(encode_frame(stamped))
            self._send_seq[cls] += 1
            self.sent[stamped.msg_type] += 1
        return stamped

    def recv(self, cls: ChannelClass | None = None, block: bool = True, timeout: float | None = None) -> WireMessage | None:
        """Next message of ``cls``, or of either class with error first when
        ``cls`` is None. Poll mode (``block=False``) never waits. Returns None
        on poll miss or timeout; raises PeerDisconnected once the peer is gone
        and the requested queues are drained."""
        order = (ChannelClass.ERROR, ChannelClass.SYNC) if cls is None else (cls,)
        with self._cv:
            while True:
                for c in order:
                    if self._inbox[c]:
                        msg = self._inbox[c].popleft()
                        self.received[msg.msg_type] += 1
                        return msg
                if self._fault is not None:
                    raise self._fault
                if self._remote_gone or self._closed:
                    raise PeerDisconnected(f"{self.name}: peer disconnected")
                if not block:
                    return None
                if not self._cv.wait(timeout):
                    return None

    def pending(self, cls: ChannelClass) -> int:
        with self._cv:
            return len(self._inbox[cls])

    def shutdown_send(self):
        """Promise to send nothing more; the peer sees end-of-stream after
        draining what is already in flight."""
        if not self._send_done:
            self._send_done = True
            self._half_close()

    def close(self):
        if self._closed:
            return
        self._closed = True
        self._close_transport()
        with self._cv:
            self._cv.notify_all()


def handshake(ch: Channel, role: str, platform_digest: bytes, *, version: int = PROTOCOL_VERSION, timeout: float = 10.0) -> HelloInfo:
    """Exchange HELLO on ``ch``; must precede all other traffic."""
    ch.send(WireMessage(MsgType.HELLO, encode_hello(version, role, platform_digest)))
    msg = ch.recv(ChannelClass.SYNC, timeout=timeout)
    if msg is None:
        raise PeerDisconnected(f"{ch.name}: no HELLO within {timeout}s")
    if msg.msg_type is not MsgType.HELLO:
        raise ProtocolError(f"{ch.name}: expected HELLO, got {msg.msg_type.name}")
    info = decode_hello(msg.payload)
    if info.version != version:
        raise VersionMismatch(f"{ch.name}: peer speaks version {info.version}, we speak {version}")
    if info.role == role:
        raise ProtocolError(f"{ch.name}: both ends claim role {role}")
    ch.peer = info
    ch.hello_done = True
    return info
