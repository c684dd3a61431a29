"""A small in-memory kernel per variant.

It speaks its own platform's ABI: raw numbers, flag bits, native struct
layouts. Values that differ between machines (pid, clocks, hostname, fd
numbering, heap addresses) come from :class:`MachineProfile`; file metadata is
derived from path and content so identical trees stat identically.
"""

from __future__ import annotations

import posixpath
import zlib
from dataclasses import dataclass, field

from ..canonical import (
    AT_FDCWD,
    NativeResult,
    RawSyscallEvent,
    decode_path,
    decode_struct,
    encode_struct,
    resolve_path,
    shadow_from_plain,
    sign_extend,
    struct_defs,
    to_register,
)
from ..platform import CanonicalSyscallId as S
from ..platform import Foldable, PlatformSpec, lookup_canonical_id, normalize_flags
from ..vfs import FsContext
from .ledger import SideEffectLedger

MTIME_BASE = 1_700_000_000


@dataclass
class Connection:
    port: int
    inbound: list[bytes]
    outbound: list[bytes] = field(default_factory=list)


class NetworkWorld:
    """Scripted remote clients. Each listening port hands out its queued
    connections in order; a connection yields its inbound chunks, then EOF."""

    def __init__(self, connections: list[tuple[int, list[bytes]]] | None = None):
        self._queued: dict[int, list[Connection]] = {}
        for port, chunks in connections or []:
            self._queued.setdefault(port, []).append(Connection(port, [bytes(c) for c in chunks]))

    def accept(self, port: int) -> Connection | None:
        q = self._queued.get(port)
        return q.pop(0) if q else None


@dataclass
class MachineProfile:
    pid: int = 4242
    ppid: int = 1
    uid: int = 1000
    clock_base: int = 1_700_000_000
    clock_step_ns: int = 1_000_003
    hostname: str = "node"
    fd_base: int = 3
    heap_base: int | None = None


@dataclass
class OpenFile:
    kind: str  # file | dir | socket | stdio | virtual
    path: str | None = None
    pos: int = 0
    flags: frozenset = frozenset()
    port: int | None = None
    listening: bool = False
    conn: Connection | None = None


_UNAME_MACHINE = {"x86_64": "x86_64", "i386": "i686", "armv7_eabi": "armv7l", "armv8": "aarch64"}


class SimKernel:
    def __init__(
        self,
        platform: PlatformSpec,
        fs: FsContext,
        name: str,
        ledger: SideEffectLedger,
        world: NetworkWorld | None = None,
        profile: MachineProfile | None = None,
    ):
        self.platform = platform
        self.fs = fs
        self.name = name
        self.ledger = ledger
        self.world = world or NetworkWorld()
        self.profile = profile or MachineProfile()
        self.fds: dict[int, OpenFile] = {
            0: OpenFile("stdio", "<stdin>"),
            1: OpenFile("stdio", "<stdout>"),
            2: OpenFile("stdio", "<stderr>"),
        }
        if platform.pointer_width == 8:
            default_heap = 0x7F00_0000_0000
        else:
            default_heap = 0x4000_0000
        self._mmap_next = self.profile.heap_base or default_heap
        self._brk = self._mmap_next - 0x1000_0000
        self._now_ns = self.profile.clock_base * 10**9
        self.exit_code: int | None = None
        self.executed: list[S] = []

    # descriptor table

    def _alloc_fd(self, of: OpenFile) -> int:
        fd = self.profile.fd_base
        while fd in self.fds:
            fd += 1
        self.fds[fd] = of
        return fd

    def reserve_fd(self) -> int:
        """Placeholder number for a descriptor that only the leader really holds."""
        return self._alloc_fd(OpenFile("virtual"))

    def free_fd(self, fd: int):
        if self.fds.get(fd, OpenFile("x")).kind == "virtual":
            del self.fds[fd]

    def _effect(self, kind: str, payload: bytes = b"", detail: str = ""):
        self.ledger.append(self.name, kind, payload, detail)

    def _tick(self) -> int:
        self._now_ns += self.profile.clock_step_ns
        return self._now_ns

    def _err(self, name: str) -> NativeResult:
        return NativeResult(to_register(-self.platform.errno[name], self.platform))

    def _ok(self, value: int, buffers=None) -> NativeResult:
        return NativeResult(to_register(value, self.platform), buffers or {})

    def stat_of(self, of: OpenFile) -> dict:
        if of.kind == "socket":
            mode, size, ino = 0o140777, 0, 0x5000 + (of.port or 0)
            content = b""
        elif of.kind == "dir":
            mode, size, ino = 0o40755, 4096, zlib.crc32(of.path.encode()) & 0x7FFFFFFF
            content = "\n".join(self.fs.children(of.path)).encode()
        elif of.kind == "stdio":
            mode, size, ino, content = 0o20620, 0, 3, b""
        else:
            content = bytes(self.fs.files.get(of.path, b""))
            mode, size, ino = 0o100644, len(content), zlib.crc32(of.path.encode()) & 0x7FFFFFFF
        t = MTIME_BASE + zlib.crc32(content) % 100_000
        return {
            "st_dev": 0x803, "st_ino": ino, "st_mode": mode, "st_nlink": 2 if mode & 0o40000 else 1,
            "st_uid": 1000, "st_gid": 1000, "st_rdev": 0, "st_size": size, "st_blksize": 4096,
            "st_blocks": (size + 511) // 512, "st_atime": t, "st_mtime": t, "st_ctime": t,
        }

    def _struct(self, name: str, values: dict) -> bytes:
        return encode_struct(self.platform, struct_defs()[name], shadow_from_plain(name, values))

    def _path(self, event_args, bufs, dirfd_idx: int | None, path_idx: int) -> str | None:
        raw = bufs.get(path_idx)
        if raw is None:
            return None
        p = decode_path(raw)
        base = self.fs.cwd
        if dirfd_idx is not None:
            d = sign_extend(event_args[dirfd_idx - 1], self.platform.pointer_width)
            if d != AT_FDCWD and not p.startswith("/"):
                of = self.fds.get(d)
                if of is None or of.kind != "dir":
                    return None
                base = of.path
        return resolve_path(p, base)

    # dispatch

    def execute(self, event: RawSyscallEvent) -> NativeResult:
        p = self.platform
        key = lookup_canonical_id(p, event.raw_number)
        a = list(event.args) + [0] * (7 - len(event.args))
        bufs = dict(event.captured_buffers)
        if isinstance(key, Foldable):
            sid = key.target
            a = [to_register(AT_FDCWD, p)] + a[:6]
            bufs = {i + 1: b for i, b in bufs.items()}
        else:
            sid = key
        self.executed.append(sid)
        handler = getattr(self, "_sys_" + sid.name.lower())
        return handler(a, bufs)

    def _fd(self, raw: int) -> tuple[int, OpenFile | None]:
        fd = sign_extend(raw, self.platform.pointer_width)
        return fd, self.fds.get(fd)

    def _sys_openat(self, a, bufs):
        path = self._path(a, bufs, 1, 2)
        if path is None:
            return self._err("ENOENT" if 2 in bufs else "EFAULT")
        if not (path == self.fs.root or path.startswith(self.fs.root.rstrip("/") + "/")):
            return self._err("EACCES")
        flags = normalize_flags(self.platform, S.OPENAT, 3, a[2] & self.platform.word_mask)
        if "DIRECTORY" in flags:
            if not self.fs.is_dir(path):
                return self._err("ENOTDIR" if self.fs.is_file(path) else "ENOENT")
            return self._ok(self._alloc_fd(OpenFile("dir", path, flags=flags)))
        if self.fs.is_dir(path):
            if flags & {"WRONLY", "RDWR"}:
                return self._err("EISDIR")
            return self._ok(self._alloc_fd(OpenFile("dir", path, flags=flags)))
        if not self.fs.is_file(path):
            if "CREAT" not in flags:
                return self._err("ENOENT")
            if not self.fs.is_dir(posixpath.dirname(path)):
                return self._err("ENOENT")
            self.fs.files[path] = bytearray()
            self._effect("fs-mutation", path.encode(), f"create {path}")
        elif "CREAT" in flags and "EXCL" in flags:
            return self._err("EEXIST")
        elif "TRUNC" in flags and flags & {"WRONLY", "RDWR"}:
            self.fs.files[path] = bytearray()
            self._effect("fs-mutation", path.encode(), f"truncate {path}")
        return self._ok(self._alloc_fd(OpenFile("file", path, flags=flags)))

    def _sys_close(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        del self.fds[fd]
        return self._ok(0)

    def _read_into(self, of: OpenFile, n: int) -> bytes | None:
        if of.kind == "file":
            data = bytes(self.fs.files.get(of.path, b"")[of.pos:of.pos + n])
            of.pos += len(data)
            return data
        if of.kind == "socket" and of.conn is not None:
            if not of.conn.inbound:
                return b""
            chunk = of.conn.inbound[0]
            data, rest = chunk[:n], chunk[n:]
            if rest:
                of.conn.inbound[0] = rest
            else:
                of.conn.inbound.pop(0)
            self._effect("net-recv", data, f"port {of.conn.port}")
            return data
        if of.kind == "stdio":
            return b""
        return None

    def _sys_read(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        if of.kind == "dir":
            return self._err("EISDIR")
        n = a[2] & self.platform.word_mask
        data = self._read_into(of, n)
        if data is None:
            return self._err("EINVAL")
        return self._ok(len(data), {2: data})

    def _write_out(self, of: OpenFile, data: bytes) -> int | None:
        if of.kind == "file":
            buf = self.fs.files.setdefault(of.path, bytearray())
            pos = len(buf) if "APPEND" in of.flags else of.pos
            if pos > len(buf):
                buf.extend(b"\0" * (pos - len(buf)))
            buf[pos:pos + len(data)] = data
            of.pos = pos + len(data)
            self._effect("file-write", data, of.path)
            return len(data)
        if of.kind == "stdio":
            self._effect("file-write", data, of.path)
            return len(data)
        if of.kind == "socket" and of.conn is not None:
            of.conn.outbound.append(data)
            self._effect("net-send", data, f"port {of.conn.port}")
            return len(data)
        return None

    def _sys_write(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        if of.kind == "file" and not of.flags & {"WRONLY", "RDWR"}:
            return self._err("EBADF")
        data = bytes(bufs.get(2, b""))[: a[2] & self.platform.word_mask]
        n = self._write_out(of, data)
        return self._err("EINVAL") if n is None else self._ok(n)

    def _sys_fstat(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None or of.kind == "virtual":
            return self._err("EBADF")
        return self._ok(0, {2: self._struct("stat", self.stat_of(of))})

    def _sys_lseek(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        if of.kind != "file":
            return self._err("ESPIPE")
        off = sign_extend(a[1], self.platform.pointer_width)
        whence = a[2]
        size = len(self.fs.files.get(of.path, b""))
        base = {0: 0, 1: of.pos, 2: size}.get(whence)
        if base is None or base + off < 0:
            return self._err("EINVAL")
        of.pos = base + off
        return self._ok(of.pos)

    def _sys_getcwd(self, a, bufs):
        data = self.fs.cwd.encode() + b"\0"
        if (a[1] & self.platform.word_mask) < len(data):
            return self._err("ERANGE")
        return self._ok(len(data), {1: data})

    def _sys_getpid(self, a, bufs):
        return self._ok(self.profile.pid)

    def _sys_getppid(self, a, bufs):
        return self._ok(self.profile.ppid)

    def _sys_getuid(self, a, bufs):
        return self._ok(self.profile.uid)

    def _sys_sched_yield(self, a, bufs):
        return self._ok(0)

    def _sys_brk(self, a, bufs):
        want = a[0] & self.platform.word_mask
        if want:
            self._brk = want
        return self._ok(self._brk)

    def _sys_gettimeofday(self, a, bufs):
        ns = self._tick()
        return self._ok(0, {1: self._struct("timeval", {"tv_sec": ns // 10**9, "tv_usec": ns % 10**9 // 1000})})

    def _sys_clock_gettime(self, a, bufs):
        ns = self._tick()
        return self._ok(0, {2: self._struct("timespec", {"tv_sec": ns // 10**9, "tv_nsec": ns % 10**9})})

    def _sys_nanosleep(self, a, bufs):
        data = bufs.get(1)
        if data is None:
            return self._err("EFAULT")
        ts = decode_struct(self.platform, struct_defs()["timespec"], data).as_dict()
        sec, nsec = ts["tv_sec"].value, ts["tv_nsec"].value
        if sec < 0 or not 0 <= nsec < 10**9:
            return self._err("EINVAL")
        self._now_ns += sec * 10**9 + nsec
        return self._ok(0)

    def _sys_uname(self, a, bufs):
        fields = {
            "sysname": b"Linux", "nodename": self.profile.hostname.encode(), "release": b"6.1.0",
            "version": b"#1 SMP", "machine": _UNAME_MACHINE.get(self.platform.name, self.platform.name).encode(),
            "domainname": b"(none)",
        }
        return self._ok(0, {1: self._struct("utsname", fields)})

    def _sys_mmap_anon(self, a, bufs):
        length = a[1] & self.platform.word_mask
        if length == 0:
            return self._err("EINVAL")
        addr = self._mmap_next
        self._mmap_next += (length + 0xFFF) & ~0xFFF
        return self._ok(addr)

    def _sys_munmap(self, a, bufs):
        return self._ok(0) if a[0] & 0xFFF == 0 else self._err("EINVAL")

    def _sys_socket(self, a, bufs):
        return self._ok(self._alloc_fd(OpenFile("socket")))

    def _sys_bind(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        if of.kind != "socket":
            return self._err("ENOTSOCK")
        data = bufs.get(2)
        if data is None:
            return self._err("EFAULT")
        sa = decode_struct(self.platform, struct_defs()["sockaddr_in"], data).as_dict()
        of.port = int.from_bytes(sa["sin_port"].data, "big")
        return self._ok(0)

    def _sys_listen(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        if of.kind != "socket":
            return self._err("ENOTSOCK")
        of.listening = True
        return self._ok(0)

    def _sys_accept(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        if of.kind != "socket" or not of.listening:
            return self._err("EINVAL")
        conn = self.world.accept(of.port)
        if conn is None:
            return self._err("EAGAIN")
        self._effect("net-recv", b"", f"accept port {of.port}")
        return self._ok(self._alloc_fd(OpenFile("socket", port=of.port, conn=conn)))

    def _sys_recvfrom(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        if of.kind != "socket":
            return self._err("ENOTSOCK")
        data = self._read_into(of, a[2] & self.platform.word_mask)
        return self._err("EINVAL") if data is None else self._ok(len(data), {2: data})

    def _sys_sendto(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        if of.kind != "socket":
            return self._err("ENOTSOCK")
        data = bytes(bufs.get(2, b""))[: a[2] & self.platform.word_mask]
        n = self._write_out(of, data)
        return self._err("EINVAL") if n is None else self._ok(n)

    def _sys_dup(self, a, bufs):
        fd, of = self._fd(a[0])
        if of is None:
            return self._err("EBADF")
        return self._ok(self._alloc_fd(of))

    def _sys_mkdirat(self, a, bufs):
        path = self._path(a, bufs, 1, 2)
        if path is None:
            return self._err("ENOENT")
        if self.fs.is_dir(path) or self.fs.is_file(path):
            return self._err("EEXIST")
        if not self.fs.is_dir(posixpath.dirname(path)):
            return self._err("ENOENT")
        self.fs.dirs.add(path)
        self._effect("fs-mutation", path.encode(), f"mkdir {path}")
        return self._ok(0)

    def _sys_unlinkat(self, a, bufs):
        path = self._path(a, bufs, 1, 2)
        if path is None:
            return self._err("ENOENT")
        flags = normalize_flags(self.platform, S.UNLINKAT, 3, a[2] & self.platform.word_mask)
        if "AT_REMOVEDIR" in flags:
            if not self.fs.is_dir(path):
                return self._err("ENOTDIR")
            if self.fs.children(path):
                return self._err("ENOTEMPTY")
            self.fs.dirs.discard(path)
        else:
            if self.fs.is_dir(path):
                return self._err("EISDIR")
            if not self.fs.is_file(path):
                return self._err("ENOENT")
            del self.fs.files[path]
        self._effect("fs-mutation", path.encode(), f"unlink {path}")
        return self._ok(0)

    def _sys_exit_group(self, a, bufs):
        self.exit_code = sign_extend(a[0], self.platform.pointer_width) & 0xFF
        return NativeResult(None)
