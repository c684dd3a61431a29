from __future__ import annotations

import itertools
import queue
import threading
import time

from ..errors import PeerDisconnected
from .channel import Channel

_registry: dict[str, "MemoryListener"] = {}
_registry_lock = threading.Lock()
_ids = itertools.count()


class MemoryChannel(Channel):
    """One end of an in-process pair. Frames are encoded and decoded exactly
    as on a wire; delivery is a direct hand-off to the peer's inbox."""

    def __init__(self, name: str = ""):
        super().__init__(name)
        self._peer: MemoryChannel | None = None

    def _transmit(self, data: bytes):
        peer = self._peer
        if peer is None or peer._closed:
            raise PeerDisconnected(f"{self.name}: peer closed")
        peer._feed(data)

    def _half_close(self):
        if self._peer is not None:
            self._peer._remote_closed()

    def _close_transport(self):
        self._half_close()


def memory_pair(name: str = "mem") -> tuple[MemoryChannel, MemoryChannel]:
    a, b = MemoryChannel(f"{name}:a"), MemoryChannel(f"{name}:b")
    a._peer, b._peer = b, a
    return a, b


class MemoryListener:
    def __init__(self, name: str):
        self.name = name
        self._pending: queue.Queue[MemoryChannel] = queue.Queue()
        with _registry_lock:
            if name in _registry:
                raise OSError(f"memory endpoint {name!r} already bound")
            _registry[name] = self

    @property
    def endpoint(self) -> str:
        return f"mem://{self.name}"

    def accept(self, timeout: float | None = None) -> MemoryChannel:
        try:
            return self._pending.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no connection on {self.endpoint}") from None

    def close(self):
        with _registry_lock:
            if _registry.get(self.name) is self:
                del _registry[self.name]


def connect_memory(name: str, timeout: float = 10.0) -> MemoryChannel:
    deadline = time.monotonic() + timeout
    while True:
        with _registry_lock:
            listener = _registry.get(name)
        if listener is not None:
            break
        if time.monotonic() > deadline:
            raise PeerDisconnected(f"nothing listening on mem://{name}")
        time.sleep(0.001)
    n = next(_ids)
    client, server = memory_pair(f"{name}#{n}")
    listener._pending.put(server)
    return client


def unique_memory_name(prefix: str = "nvx") -> str:
    return f"{prefix}-{next(_ids)}-{time.monotonic_ns()}"
