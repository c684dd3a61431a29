from __future__ import annotations

import socket
import threading
import time

from ..errors import PeerDisconnected
from .channel import Channel


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, name: str = ""):
        super().__init__(name or "tcp:%s:%d" % sock.getpeername()[:2])
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(None)
        self._sock = sock
        self._reader = threading.Thread(target=self._read_loop, name=f"{self.name}-rx", daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            while True:
                data = self._sock.recv(65536)
                if not data:
                    break
                self._feed(data)
        except OSError:
            pass
        finally:
            self._remote_closed()

    def _transmit(self, data: bytes):
        try:
            self._sock.sendall(data)
        except OSError as e:
            raise PeerDisconnected(f"{self.name}: {e}") from None

    def _half_close(self):
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass

    def _close_transport(self):
        # half-close so the peer still reads everything we sent, then wait for its FIN
        self.shutdown_send()
        self._reader.join(timeout=2.0)
        self._sock.close()


class TcpListener:
    def __init__(self, host: str = "127.0.0.1", port: int = 0, backlog: int = 16):
        self._sock = socket.create_server((host, port), backlog=backlog, reuse_port=False)
        self.host, self.port = self._sock.getsockname()[:2]

    @property
    def endpoint(self) -> str:
        return f"tcp://{self.host}:{self.port}"

    def accept(self, timeout: float | None = None) -> TcpChannel:
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
        except socket.timeout:
            raise TimeoutError(f"no connection on {self.endpoint}") from None
        return TcpChannel(conn)

    def close(self):
        self._sock.close()


def connect_tcp(host: str, port: int, timeout: float = 10.0) -> TcpChannel:
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return TcpChannel(sock)
        except ConnectionRefusedError:
            if time.monotonic() > deadline:
                raise PeerDisconnected(f"connection to {host}:{port} refused") from None
            time.sleep(0.01)
