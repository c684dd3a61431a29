"""Logical programs and their per-ABI rendering into raw syscall events."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Generator, Mapping

from ..canonical import (
    AT_FDCWD,
    NativeResult,
    RawSyscallEvent,
    encode_struct,
    shadow_from_plain,
    sign_extend,
    struct_defs,
    to_register,
)
from ..errors import UnrenderableIntent
from ..platform import CanonicalSyscallId as S
from ..platform import Foldable, PlatformSpec, compute_struct_layout, denormalize_flags

OPS = {
    "open", "close", "read", "write", "fstat", "lseek", "getcwd", "getpid", "getppid", "getuid",
    "sched_yield", "brk", "gettimeofday", "clock_gettime", "nanosleep", "uname", "mmap", "munmap",
    "socket", "bind", "listen", "accept", "recvfrom", "sendto", "dup", "mkdirat", "unlinkat",
    "exit", "indirect_call",
}

# canonical syscall each op issues (open may render as OPEN instead)
OP_SYSCALL = {
    "open": S.OPENAT, "close": S.CLOSE, "read": S.READ, "write": S.WRITE, "fstat": S.FSTAT,
    "lseek": S.LSEEK, "getcwd": S.GETCWD, "getpid": S.GETPID, "getppid": S.GETPPID,
    "getuid": S.GETUID, "sched_yield": S.SCHED_YIELD, "brk": S.BRK, "gettimeofday": S.GETTIMEOFDAY,
    "clock_gettime": S.CLOCK_GETTIME, "nanosleep": S.NANOSLEEP, "uname": S.UNAME,
    "mmap": S.MMAP_ANON, "munmap": S.MUNMAP, "socket": S.SOCKET, "bind": S.BIND, "listen": S.LISTEN,
    "accept": S.ACCEPT, "recvfrom": S.RECVFROM, "sendto": S.SENDTO, "dup": S.DUP,
    "mkdirat": S.MKDIRAT, "unlinkat": S.UNLINKAT, "exit": S.EXIT_GROUP,
}


@dataclass
class Intent:
    op: str
    args: dict = field(default_factory=dict)
    handle: str | None = None  # binds the result (or output buffer) for later steps
    overrides: dict = field(default_factory=dict)  # platform name -> arg overrides

    def __post_init__(self):
        if self.op not in OPS:
            raise UnrenderableIntent(f"unknown op {self.op!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> Intent:
        d = dict(d)
        op = d.pop("op")
        handle = d.pop("as", None)
        overrides = d.pop("overrides", {})
        return cls(op, d, handle, dict(overrides))

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"op": self.op, **self.args}
        if self.handle:
            d["as"] = self.handle
        if self.overrides:
            d["overrides"] = self.overrides
        return d

    def args_for(self, platform: PlatformSpec, defaults: Mapping | None = None) -> dict:
        merged = dict(defaults or {})
        merged.update(self.args)
        merged.update(self.overrides.get(platform.name, {}))
        return merged


@dataclass
class LogicalProgram:
    steps: list[Intent]
    name: str = "program"

    @classmethod
    def from_list(cls, steps, name: str = "program") -> LogicalProgram:
        return cls([s if isinstance(s, Intent) else Intent.from_dict(s) for s in steps], name)

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self.steps]

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class Step:
    """One rendered syscall; ``ordinal`` is the index of the intent it came from."""

    ordinal: int
    event: RawSyscallEvent
    injected: bool = False


class _Memory:
    """Bump allocator for user-space buffer addresses."""

    def __init__(self, platform: PlatformSpec, salt: int = 0):
        if platform.pointer_width == 8:
            self.next = 0x5555_0000_0000 + (salt << 24)
        else:
            self.next = 0x0804_0000 + (salt << 20)

    def alloc(self, n: int) -> int:
        addr = self.next
        self.next += (max(n, 1) + 15) & ~15
        return addr


def _cstr(s: str) -> bytes:
    return s.encode() + b"\0"


def _data(args: Mapping, env: Mapping[str, Any]) -> bytes:
    if "data_from" in args:
        v = env.get(args["data_from"])
        if not isinstance(v, (bytes, bytearray)):
            raise UnrenderableIntent(f"no buffer bound to {args['data_from']!r}")
        return bytes(v)
    if "hex" in args:
        return bytes.fromhex(args["hex"])
    d = args.get("data", b"")
    return d.encode() if isinstance(d, str) else bytes(d)


def _shadow(platform: PlatformSpec, name: str, values: Mapping) -> tuple[bytes, int]:
    sdef = struct_defs()[name]
    data = encode_struct(platform, sdef, shadow_from_plain(name, values))
    return data, compute_struct_layout(platform, sdef).size


class Renderer:
    """Turns intents into raw events for one platform.

    ``defaults`` are per-variant arg defaults (e.g. ``use_open``) that
    per-intent ``overrides`` can refine.
    """

    def __init__(self, platform: PlatformSpec, *, defaults: Mapping | None = None, salt: int = 0):
        self.platform = platform
        self.defaults = dict(defaults or {})
        self.mem = _Memory(platform, salt)
        self.env: dict[str, Any] = {}

    def _reg(self, v: int) -> int:
        return to_register(int(v), self.platform)

    def _num(self, key) -> int:
        n = self.platform.number_of(key)
        if n is None:
            raise UnrenderableIntent(f"{self.platform.name} has no {key.name}")
        return n

    def _fd(self, ref) -> int:
        if isinstance(ref, int):
            return ref
        v = self.env.get(ref)
        if not isinstance(v, int):
            raise UnrenderableIntent(f"no descriptor bound to {ref!r}")
        return v

    def _flags(self, sid: S, idx: int, names) -> int:
        names = [n for n in names if n != "RDONLY"]
        return denormalize_flags(self.platform, sid, idx, names)

    def render(self, intent: Intent) -> RawSyscallEvent:
        p = self.platform
        a = intent.args_for(p, self.defaults)
        op = intent.op
        ev = lambda key, args, bufs=None: RawSyscallEvent(  # noqa: E731
            p, self._num(key), tuple(self._reg(x) for x in args), bufs or {}
        )
        if op == "open":
            names = list(a.get("flags", []))
            if p.pointer_width == 4:
                names.append("LARGEFILE")
            flags = self._flags(S.OPENAT, 3, names)
            mode = a.get("mode", 0o644)
            path = _cstr(a["path"])
            ptr = self.mem.alloc(len(path))
            explicit = {**intent.args, **intent.overrides.get(p.name, {})}
            if "relative_to" in a and explicit.get("use_open"):
                raise UnrenderableIntent("OPEN cannot take a directory descriptor")
            if a.get("use_open") and "relative_to" not in a:
                # a variant-wide OPEN preference yields to explicit *at() use
                return ev(Foldable.OPEN, (ptr, flags, mode), {1: path})
            dirfd = self._fd(a["relative_to"]) if "relative_to" in a else AT_FDCWD
            return ev(S.OPENAT, (dirfd, ptr, flags, mode), {2: path})
        if op == "close":
            return ev(S.CLOSE, (self._fd(a["fd"]),))
        if op == "read":
            n = int(a.get("count", 512))
            return ev(S.READ, (self._fd(a["fd"]), self.mem.alloc(n), n))
        if op == "write":
            data = _data(a, self.env)
            return ev(S.WRITE, (self._fd(a["fd"]), self.mem.alloc(len(data)), len(data)), {2: data})
        if op == "fstat":
            return ev(S.FSTAT, (self._fd(a["fd"]), self.mem.alloc(144)))
        if op == "lseek":
            return ev(S.LSEEK, (self._fd(a["fd"]), int(a.get("offset", 0)), int(a.get("whence", 0))))
        if op == "getcwd":
            n = int(a.get("size", 256))
            return ev(S.GETCWD, (self.mem.alloc(n), n))
        if op in ("getpid", "getppid", "getuid", "sched_yield"):
            return ev(OP_SYSCALL[op], ())
        if op == "brk":
            return ev(S.BRK, (int(a.get("addr", 0)),))
        if op == "gettimeofday":
            return ev(S.GETTIMEOFDAY, (self.mem.alloc(16), 0))
        if op == "clock_gettime":
            return ev(S.CLOCK_GETTIME, (int(a.get("clock", 0)), self.mem.alloc(16)))
        if op == "nanosleep":
            data, size = _shadow(p, "timespec", {"tv_sec": int(a.get("sec", 0)), "tv_nsec": int(a.get("nsec", 0))})
            return ev(S.NANOSLEEP, (self.mem.alloc(size), 0), {1: data})
        if op == "uname":
            return ev(S.UNAME, (self.mem.alloc(390),))
        if op == "mmap":
            prot = self._flags(S.MMAP_ANON, 3, a.get("prot", ["PROT_READ", "PROT_WRITE"]))
            flags = self._flags(S.MMAP_ANON, 4, a.get("flags", ["MAP_PRIVATE", "MAP_ANONYMOUS"]))
            return ev(S.MMAP_ANON, (0, int(a.get("length", 4096)), prot, flags, -1, 0))
        if op == "munmap":
            addr = self.env.get(a["addr_from"]) if "addr_from" in a else a.get("addr", 0)
            if not isinstance(addr, int):
                raise UnrenderableIntent(f"no address bound to {a.get('addr_from')!r}")
            return ev(S.MUNMAP, (addr, int(a.get("length", 4096))))
        if op == "socket":
            return ev(S.SOCKET, (int(a.get("domain", 2)), int(a.get("type", 1)), int(a.get("protocol", 0))))
        if op == "bind":
            port = int(a.get("port", 8080))
            addr = bytes(int(x) for x in str(a.get("addr", "127.0.0.1")).split("."))
            data, size = _shadow(p, "sockaddr_in", {
                "sin_family": 2, "sin_port": port.to_bytes(2, "big"), "sin_addr": addr,
            })
            return ev(S.BIND, (self._fd(a["fd"]), self.mem.alloc(size), size), {2: data})
        if op == "listen":
            return ev(S.LISTEN, (self._fd(a["fd"]), int(a.get("backlog", 16))))
        if op == "accept":
            return ev(S.ACCEPT, (self._fd(a["fd"]), 0, 0))
        if op == "recvfrom":
            n = int(a.get("count", 512))
            flags = self._flags(S.RECVFROM, 4, a.get("flags", []))
            return ev(S.RECVFROM, (self._fd(a["fd"]), self.mem.alloc(n), n, flags, 0, 0))
        if op == "sendto":
            data = _data(a, self.env)
            flags = self._flags(S.SENDTO, 4, a.get("flags", []))
            return ev(S.SENDTO, (self._fd(a["fd"]), self.mem.alloc(len(data)), len(data), flags, 0, 0), {2: data})
        if op == "dup":
            return ev(S.DUP, (self._fd(a["fd"]),))
        if op == "mkdirat":
            path = _cstr(a["path"])
            dirfd = self._fd(a["relative_to"]) if "relative_to" in a else AT_FDCWD
            return ev(S.MKDIRAT, (dirfd, self.mem.alloc(len(path)), int(a.get("mode", 0o755))), {2: path})
        if op == "unlinkat":
            path = _cstr(a["path"])
            dirfd = self._fd(a["relative_to"]) if "relative_to" in a else AT_FDCWD
            flags = self._flags(S.UNLINKAT, 3, a.get("flags", []))
            return ev(S.UNLINKAT, (dirfd, self.mem.alloc(len(path)), flags), {2: path})
        if op == "exit":
            return ev(S.EXIT_GROUP, (int(a.get("code", 0)),))
        raise UnrenderableIntent(f"{op} does not render to a single syscall")

    def bind(self, intent: Intent, event: RawSyscallEvent, result: NativeResult | None):
        """Remember what later intents may refer to by ``intent.handle``."""
        if not intent.handle or result is None or result.raw_result is None:
            return
        if intent.op in ("read", "recvfrom", "getcwd"):
            idx = 2 if intent.op != "getcwd" else 1
            r = sign_extend(result.raw_result, self.platform.pointer_width)
            data = result.buffers.get(idx, b"")
            self.env[intent.handle] = bytes(data[: max(r, 0)]) if intent.op != "getcwd" else bytes(data)
        else:
            self.env[intent.handle] = sign_extend(result.raw_result, self.platform.pointer_width)


Variant = Generator[Step, "NativeResult | None", None]


def render_variant(
    prog: LogicalProgram,
    platform: PlatformSpec,
    *,
    defaults: Mapping | None = None,
    faults=(),
    code_pointers: Mapping[str, int] | None = None,
    gadget_effects: Mapping[int, list] | None = None,
    salt: int = 0,
) -> Variant:
    """Generator of :class:`Step`; send each step's :class:`NativeResult` back.

    ``indirect_call`` intents issue nothing unless a fault redirected the
    code pointer, in which case the landing address decides: a known gadget
    runs its scripted steps, anything else crashes the variant (exit 139).
    A program that does not end in ``exit`` gets one appended.
    """
    from .faults import apply_event_faults, extra_events, patched_pointer

    r = Renderer(platform, defaults=defaults, salt=salt)
    steps = list(prog.steps)
    if not steps or steps[-1].op != "exit":
        steps.append(Intent("exit", {"code": 0}))
    by_ordinal: dict[int, list] = {}
    for f in faults:
        by_ordinal.setdefault(f.trigger, []).append(f)
    for ordinal, intent in enumerate(steps):
        fs = by_ordinal.get(ordinal, [])
        for ev in extra_events(fs, r):
            yield Step(ordinal, ev, injected=True)
        if intent.op == "indirect_call":
            label = intent.args["pointer"]
            addr = (code_pointers or {}).get(label)
            target = patched_pointer(fs, addr)
            if target is None or target == addr:
                continue
            gadget = (gadget_effects or {}).get(target)
            body = [Intent.from_dict(g) for g in gadget] if gadget else [Intent("exit", {"code": 139})]
            for g in body:
                ev = r.render(g)
                res = yield Step(ordinal, ev, injected=True)
                r.bind(g, ev, res)
                if g.op == "exit":
                    return
            continue
        ev = apply_event_faults(fs, r.render(intent), platform)
        res = yield Step(ordinal, ev)
        r.bind(intent, ev, res)
        if intent.op == "exit":
            return
