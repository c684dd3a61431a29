"""Platform-independent syscall states.

Raw events observed at a variant are rewritten into :class:`CanonicalSyscallState`
values: syscall numbers become canonical ids, flag bitmasks become sets of
names, native struct images become ordered shadow records, pathnames are fully
resolved, descriptor numbers become program-order canonical ids and pointer
values shrink to null/non-null tags. :func:`serialize_state` gives the byte
encoding compared across variants and carried verbatim in STATE messages.
"""

from __future__ import annotations

import enum
import posixpath
import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

from .errors import CanonicalizationError, PathEscape
from .platform import (
    CanonicalSyscallId as S,
    Foldable,
    PlatformSpec,
    StructDef,
    StructLayout,
    SyscallKey,
    compute_struct_layout,
    load_struct_defs,
    lookup_canonical_id,
    normalize_flags,
    denormalize_flags,
)

AT_FDCWD = -100
MAX_ERRNO = 4095


class Direction(enum.Enum):
    ENTRY = "entry"
    EXIT = "exit"


# syscall signatures


class ArgKind(enum.Enum):
    INT = "int"
    UINT = "uint"
    FD = "fd"
    DIRFD = "dirfd"
    FLAGS = "flags"
    PATH = "path"
    IN_BUF = "in_buf"
    OUT_BUF = "out_buf"
    IN_STRUCT = "in_struct"
    OUT_STRUCT = "out_struct"
    PTR = "ptr"


class RetKind(enum.Enum):
    INT = "int"
    FD = "fd"
    PTR = "ptr"
    NONE = "none"


@dataclass(frozen=True)
class Arg:
    kind: ArgKind
    struct: str | None = None

    @property
    def is_output(self) -> bool:
        return self.kind in (ArgKind.OUT_BUF, ArgKind.OUT_STRUCT)


@dataclass(frozen=True)
class Signature:
    args: tuple[Arg, ...]
    ret: RetKind

    def output_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.args, 1) if a.is_output]

    def index_of(self, kind: ArgKind) -> int | None:
        for i, a in enumerate(self.args, 1):
            if a.kind is kind:
                return i
        return None


def _sig(ret: RetKind, *args) -> Signature:
    return Signature(tuple(a if isinstance(a, Arg) else Arg(a) for a in args), ret)


K = ArgKind
SIGNATURES: dict[SyscallKey, Signature] = {
    S.READ: _sig(RetKind.INT, K.FD, K.OUT_BUF, K.UINT),
    S.WRITE: _sig(RetKind.INT, K.FD, K.IN_BUF, K.UINT),
    S.OPENAT: _sig(RetKind.FD, K.DIRFD, K.PATH, K.FLAGS, K.UINT),
    Foldable.OPEN: _sig(RetKind.FD, K.PATH, K.FLAGS, K.UINT),
    S.CLOSE: _sig(RetKind.INT, K.FD),
    S.FSTAT: _sig(RetKind.INT, K.FD, Arg(K.OUT_STRUCT, "stat")),
    S.LSEEK: _sig(RetKind.INT, K.FD, K.INT, K.INT),
    S.GETCWD: _sig(RetKind.INT, K.OUT_BUF, K.UINT),
    S.GETPID: _sig(RetKind.INT),
    S.GETPPID: _sig(RetKind.INT),
    S.GETUID: _sig(RetKind.INT),
    S.SCHED_YIELD: _sig(RetKind.INT),
    S.MMAP_ANON: _sig(RetKind.PTR, K.PTR, K.UINT, K.FLAGS, K.FLAGS, K.INT, K.UINT),
    S.MUNMAP: _sig(RetKind.INT, K.PTR, K.UINT),
    S.BRK: _sig(RetKind.PTR, K.PTR),
    S.SOCKET: _sig(RetKind.FD, K.INT, K.INT, K.INT),
    S.BIND: _sig(RetKind.INT, K.FD, Arg(K.IN_STRUCT, "sockaddr_in"), K.UINT),
    S.LISTEN: _sig(RetKind.INT, K.FD, K.INT),
    S.ACCEPT: _sig(RetKind.FD, K.FD, K.PTR, K.PTR),
    S.RECVFROM: _sig(RetKind.INT, K.FD, K.OUT_BUF, K.UINT, K.FLAGS, K.PTR, K.PTR),
    S.SENDTO: _sig(RetKind.INT, K.FD, K.IN_BUF, K.UINT, K.FLAGS, K.PTR, K.UINT),
    S.DUP: _sig(RetKind.FD, K.FD),
    S.EXIT_GROUP: _sig(RetKind.NONE, K.INT),
    S.GETTIMEOFDAY: _sig(RetKind.INT, Arg(K.OUT_STRUCT, "timeval"), K.PTR),
    S.CLOCK_GETTIME: _sig(RetKind.INT, K.INT, Arg(K.OUT_STRUCT, "timespec")),
    S.NANOSLEEP: _sig(RetKind.INT, Arg(K.IN_STRUCT, "timespec"), K.PTR),
    S.UNAME: _sig(RetKind.INT, Arg(K.OUT_STRUCT, "utsname")),
    S.MKDIRAT: _sig(RetKind.INT, K.DIRFD, K.PATH, K.UINT),
    S.UNLINKAT: _sig(RetKind.INT, K.DIRFD, K.PATH, K.FLAGS),
}
del K

# Flags some ABIs set implicitly and others never pass; they carry no meaning
# once offsets are 64-bit canonically.
IMPLIED_FLAGS: dict[tuple[S, int], frozenset[str]] = {
    (S.OPENAT, 3): frozenset({"LARGEFILE"}),
}

_STRUCTS: dict[str, StructDef] | None = None


def struct_defs() -> dict[str, StructDef]:
    global _STRUCTS
    if _STRUCTS is None:
        _STRUCTS = load_struct_defs()
    return _STRUCTS


def signature(key: SyscallKey) -> Signature:
    return SIGNATURES[key]


# tagged values


@dataclass(frozen=True)
class IntVal:
    value: int


@dataclass(frozen=True)
class FlagsVal:
    names: frozenset[str]


@dataclass(frozen=True)
class PathVal:
    path: str


@dataclass(frozen=True)
class FdVal:
    id: int | None
    raw: int | None = None  # only set when the local descriptor has no canonical id


@dataclass(frozen=True)
class BufferVal:
    data: bytes


@dataclass(frozen=True)
class ArrayVal:
    items: tuple[int, ...]


@dataclass(frozen=True)
class ShadowStruct:
    name: str
    fields: tuple[tuple[str, "Value"], ...]

    def as_dict(self) -> dict:
        return dict(self.fields)


@dataclass(frozen=True)
class PointerTag:
    nonnull: bool


@dataclass(frozen=True)
class ErrorVal:
    name: str


Value = Union[IntVal, FlagsVal, PathVal, FdVal, BufferVal, ArrayVal, ShadowStruct, PointerTag, ErrorVal]

CWD_TOKEN = FdVal(AT_FDCWD)


# descriptor translation


@dataclass
class FdInfo:
    kind: str  # stdio | file | dir | socket
    path: str | None = None
    local: bool = False  # opened through LocalExecute on every variant
    writable: bool = False


class FdTranslation:
    """Variant-local descriptor numbers <-> canonical program-order ids.

    0, 1 and 2 are preassigned to stdio. Every later successful open, socket,
    accept or dup takes the next canonical id.
    """

    def __init__(self):
        self._to_canon: dict[int, int] = {}
        self._to_local: dict[int, int] = {}
        self._info: dict[int, FdInfo] = {}
        for fd, name in enumerate(("<stdin>", "<stdout>", "<stderr>")):
            self._link(fd, fd, FdInfo("stdio", name, writable=fd != 0))
        self._next = 3

    def _link(self, local: int, canonical: int, info: FdInfo):
        self._to_canon[local] = canonical
        self._to_local[canonical] = local
        self._info[canonical] = info

    def canonical(self, local: int) -> int | None:
        return self._to_canon.get(local)

    def local_of(self, canonical: int) -> int | None:
        return self._to_local.get(canonical)

    def info(self, canonical: int | None) -> FdInfo | None:
        return None if canonical is None else self._info.get(canonical)

    def peek_next(self) -> int:
        return self._next

    def assign(self, local: int, info: FdInfo) -> int:
        c = self._next
        self._next += 1
        self._link(local, c, info)
        return c

    def bind(self, local: int, canonical: int, info: FdInfo):
        self._link(local, canonical, info)
        self._next = max(self._next, canonical + 1)

    def release(self, local: int):
        c = self._to_canon.pop(local, None)
        if c is not None:
            self._to_local.pop(c, None)
            self._info.pop(c, None)


# events and states


@dataclass(frozen=True)
class RawSyscallEvent:
    platform: PlatformSpec
    raw_number: int
    args: tuple[int, ...] = ()
    captured_buffers: Mapping[int, bytes] = field(default_factory=dict)  # 1-based arg index
    direction: Direction = Direction.ENTRY
    raw_result: int | None = None

    def __post_init__(self):
        if len(self.args) > 7:
            raise ValueError("at most 7 syscall arguments")
        if self.direction is Direction.ENTRY and self.raw_result is not None:
            raise ValueError("entry events carry no result")
        for idx in self.captured_buffers:
            if not 1 <= idx <= max(len(self.args), 1):
                raise ValueError(f"captured buffer for nonexistent argument {idx}")

    def arg(self, index: int) -> int:
        """1-based raw argument; missing trailing arguments read as 0."""
        return self.args[index - 1] if index <= len(self.args) else 0

    def exit(self, raw_result: int | None, buffers: Mapping[int, bytes] | None = None) -> RawSyscallEvent:
        return RawSyscallEvent(self.platform, self.raw_number, self.args, dict(buffers or {}), Direction.EXIT, raw_result)


@dataclass(frozen=True)
class CanonicalSyscallState:
    id: S
    norm_args: tuple[Value, ...]
    direction: Direction = Direction.ENTRY


# numeric helpers


def sign_extend(value: int, width_bytes: int) -> int:
    bits = 8 * width_bytes
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


def to_register(value: int, platform: PlatformSpec) -> int:
    return value & platform.word_mask


def decode_path(data: bytes) -> str:
    return data.split(b"\0", 1)[0].decode("utf-8", "surrogateescape")


def resolve_path(path: str, base: str) -> str:
    joined = path if path.startswith("/") else posixpath.join(base, path)
    norm = posixpath.normpath(joined)
    if norm.startswith("//"):
        norm = "/" + norm.lstrip("/")
    return norm


def within_root(path: str, root: str) -> bool:
    root = root.rstrip("/") or "/"
    return root == "/" or path == root or path.startswith(root + "/")


# native struct codec


def layout_for(platform: PlatformSpec, name: str) -> tuple[StructDef, StructLayout]:
    sdef = struct_defs()[name]
    return sdef, compute_struct_layout(platform, sdef)


def decode_struct(platform: PlatformSpec, sdef: StructDef, data: bytes) -> ShadowStruct:
    layout = compute_struct_layout(platform, sdef)
    if len(data) < layout.size:
        raise CanonicalizationError(f"{sdef.name}: {len(data)} bytes captured, layout needs {layout.size}")
    order = platform.byteorder
    out = []
    for f, off in zip(sdef.fields, layout.offsets):
        m = platform.metric(f.type)
        if f.count is None:
            out.append((f.name, IntVal(int.from_bytes(data[off:off + m.size], order, signed=m.signed))))
        elif m.size == 1:
            out.append((f.name, BufferVal(bytes(data[off:off + f.count]))))
        else:
            items = tuple(
                int.from_bytes(data[off + k * m.size: off + (k + 1) * m.size], order, signed=m.signed)
                for k in range(f.count)
            )
            out.append((f.name, ArrayVal(items)))
    return ShadowStruct(sdef.name, tuple(out))


def encode_struct(platform: PlatformSpec, sdef: StructDef, shadow: ShadowStruct) -> bytes:
    layout = compute_struct_layout(platform, sdef)
    values = shadow.as_dict()
    buf = bytearray(layout.size)
    order = platform.byteorder
    for f, off in zip(sdef.fields, layout.offsets):
        m = platform.metric(f.type)
        v = values[f.name]
        try:
            if f.count is None:
                buf[off:off + m.size] = int(v.value).to_bytes(m.size, order, signed=m.signed)
            elif isinstance(v, BufferVal):
                chunk = v.data[: f.count]
                buf[off:off + len(chunk)] = chunk
            else:
                for k, item in enumerate(v.items[: f.count]):
                    buf[off + k * m.size: off + (k + 1) * m.size] = int(item).to_bytes(m.size, order, signed=m.signed)
        except OverflowError:
            raise CanonicalizationError(f"{sdef.name}.{f.name} value does not fit {f.type} on {platform.name}") from None
    return bytes(buf)


def shadow_from_plain(name: str, values: Mapping) -> ShadowStruct:
    """Shadow record from plain Python values; missing fields are zero."""
    sdef = struct_defs()[name]
    fields = []
    for f in sdef.fields:
        v = values.get(f.name)
        if f.count is None:
            fields.append((f.name, IntVal(int(v or 0))))
        elif isinstance(v, (bytes, bytearray)) or v is None:
            fields.append((f.name, BufferVal(bytes(v or b"").ljust(f.count, b"\0")[: f.count])))
        else:
            fields.append((f.name, ArrayVal(tuple(int(x) for x in v))))
    return ShadowStruct(name, tuple(fields))


# canonicalization


def _fd_val(raw: int, platform: PlatformSpec, fdmap: FdTranslation) -> FdVal:
    local = sign_extend(raw, platform.pointer_width)
    c = fdmap.canonical(local)
    return FdVal(c) if c is not None else FdVal(None, local)


def _canon_error(result: int, platform: PlatformSpec) -> ErrorVal:
    return ErrorVal(platform.errno_name(-result) or f"ERRNO_{-result}")


def canonical_result(sid: S, raw_result: int, platform: PlatformSpec, fdmap: FdTranslation) -> Value:
    kind = SIGNATURES[sid].ret
    r = sign_extend(raw_result, platform.pointer_width)
    if -MAX_ERRNO <= r < 0:
        return _canon_error(r, platform)
    if kind is RetKind.PTR:
        return PointerTag(r != 0)
    if kind is RetKind.FD:
        c = fdmap.canonical(r)
        return FdVal(c) if c is not None else FdVal(None, r)
    return IntVal(r)


def canonicalize(event: RawSyscallEvent, fs, fdmap: FdTranslation) -> CanonicalSyscallState:
    """Rewrite a raw event into its canonical state.

    ``fs`` supplies ``root`` (the application root) and ``cwd``. OPEN folds
    into OPENAT with the path fully resolved and the directory argument
    replaced by the working-directory token.
    """
    platform = event.platform
    key = lookup_canonical_id(platform, event.raw_number)
    sig = SIGNATURES[key]
    if isinstance(key, Foldable):
        sid = key.target
        # OPEN(path, flags, mode) is OPENAT(AT_FDCWD, path, flags, mode)
        args = (to_register(AT_FDCWD, platform),) + tuple(event.args)
        buffers = {i + 1: b for i, b in event.captured_buffers.items()}
        sig = SIGNATURES[sid]
    else:
        sid = key
        args = tuple(event.args)
        buffers = dict(event.captured_buffers)

    if event.direction is Direction.EXIT:
        if sig.ret is RetKind.NONE:
            return CanonicalSyscallState(sid, (), Direction.EXIT)
        result = canonical_result(sid, event.raw_result or 0, platform, fdmap)
        values: list[Value] = [result]
        if not isinstance(result, ErrorVal):
            for i in sig.output_indices():
                a = sig.args[i - 1]
                data = buffers.get(i, b"")
                if a.kind is ArgKind.OUT_STRUCT:
                    values.append(decode_struct(platform, struct_defs()[a.struct], data) if data else PointerTag(False))
                else:
                    values.append(BufferVal(bytes(data)))
        return CanonicalSyscallState(sid, tuple(values), Direction.EXIT)

    def raw(i: int) -> int:
        return args[i - 1] if i <= len(args) else 0

    values = []
    base_dir: str | None = fs.cwd
    dir_unresolved: FdVal | None = None
    for i, a in enumerate(sig.args, 1):
        r = raw(i)
        if a.kind is ArgKind.INT:
            values.append(IntVal(sign_extend(r, platform.pointer_width)))
        elif a.kind is ArgKind.UINT:
            values.append(IntVal(r & platform.word_mask))
        elif a.kind is ArgKind.FD:
            values.append(_fd_val(r, platform, fdmap))
        elif a.kind is ArgKind.DIRFD:
            d = sign_extend(r, platform.pointer_width)
            if d != AT_FDCWD:
                fv = _fd_val(r, platform, fdmap)
                info = fdmap.info(fv.id)
                if info is not None and info.path and info.kind == "dir":
                    base_dir = info.path
                else:
                    base_dir, dir_unresolved = None, fv
            values.append(CWD_TOKEN)
        elif a.kind is ArgKind.PATH:
            data = buffers.get(i)
            if data is None:
                values.append(PointerTag(r != 0))
                continue
            p = decode_path(data)
            if base_dir is None and not p.startswith("/"):
                # relative to a descriptor we cannot name: keep it unresolved
                values[-1] = dir_unresolved
                values.append(PathVal(p))
                continue
            resolved = resolve_path(p, base_dir or "/")
            if not within_root(resolved, fs.root):
                raise PathEscape(resolved, fs.root)
            values.append(PathVal(resolved))
        elif a.kind is ArgKind.FLAGS:
            names = normalize_flags(platform, sid, i, r & platform.word_mask)
            values.append(FlagsVal(names - IMPLIED_FLAGS.get((sid, i), frozenset())))
        elif a.kind is ArgKind.IN_BUF:
            data = buffers.get(i)
            values.append(BufferVal(bytes(data)) if data is not None else PointerTag(r != 0))
        elif a.kind is ArgKind.IN_STRUCT:
            data = buffers.get(i)
            if data is None:
                values.append(PointerTag(r != 0))
            else:
                values.append(decode_struct(platform, struct_defs()[a.struct], data))
        else:  # PTR, OUT_BUF, OUT_STRUCT at entry
            values.append(PointerTag(r != 0))
    return CanonicalSyscallState(sid, tuple(values), Direction.ENTRY)


# serialization

_T_INT, _T_FLAGS, _T_PATH, _T_FD, _T_BUF, _T_SHADOW, _T_PTR, _T_ERR, _T_ARRAY, _T_RAWFD = range(1, 11)


def _str(s: str) -> bytes:
    b = s.encode("utf-8", "surrogateescape")
    return struct.pack("<I", len(b)) + b


def _value_bytes(v: Value) -> bytes:
    if isinstance(v, IntVal):
        return struct.pack("<Bq", _T_INT, v.value)
    if isinstance(v, FlagsVal):
        names = sorted(v.names)
        return struct.pack("<BI", _T_FLAGS, len(names)) + b"".join(_str(n) for n in names)
    if isinstance(v, PathVal):
        return bytes([_T_PATH]) + _str(v.path)
    if isinstance(v, FdVal):
        if v.id is None:
            return struct.pack("<Bq", _T_RAWFD, v.raw)
        return struct.pack("<Bq", _T_FD, v.id)
    if isinstance(v, BufferVal):
        return struct.pack("<BI", _T_BUF, len(v.data)) + v.data
    if isinstance(v, ArrayVal):
        return struct.pack("<BI", _T_ARRAY, len(v.items)) + b"".join(struct.pack("<q", x) for x in v.items)
    if isinstance(v, ShadowStruct):
        parts = [bytes([_T_SHADOW]), _str(v.name), struct.pack("<I", len(v.fields))]
        for name, fv in v.fields:
            parts += [_str(name), _value_bytes(fv)]
        return b"".join(parts)
    if isinstance(v, PointerTag):
        return struct.pack("<BB", _T_PTR, int(v.nonnull))
    if isinstance(v, ErrorVal):
        return bytes([_T_ERR]) + _str(v.name)
    raise TypeError(f"not a canonical value: {v!r}")


def serialize_value(v: Value) -> bytes:
    return _value_bytes(v)


def serialize_state(state: CanonicalSyscallState) -> bytes:
    parts = [
        bytes([0 if state.direction is Direction.ENTRY else 1]),
        _str(state.id.name),
        struct.pack("<I", len(state.norm_args)),
    ]
    parts += [_value_bytes(v) for v in state.norm_args]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CanonicalizationError("truncated canonical state")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8", "surrogateescape")


def _read_value(r: _Reader) -> Value:
    (tag,) = r.unpack("<B")
    if tag == _T_INT:
        return IntVal(r.unpack("<q")[0])
    if tag == _T_FLAGS:
        (n,) = r.unpack("<I")
        return FlagsVal(frozenset(r.string() for _ in range(n)))
    if tag == _T_PATH:
        return PathVal(r.string())
    if tag == _T_FD:
        return FdVal(r.unpack("<q")[0])
    if tag == _T_RAWFD:
        return FdVal(None, r.unpack("<q")[0])
    if tag == _T_BUF:
        (n,) = r.unpack("<I")
        return BufferVal(r.take(n))
    if tag == _T_ARRAY:
        (n,) = r.unpack("<I")
        return ArrayVal(tuple(r.unpack("<q")[0] for _ in range(n)))
    if tag == _T_SHADOW:
        name = r.string()
        (n,) = r.unpack("<I")
        return ShadowStruct(name, tuple((r.string(), _read_value(r)) for _ in range(n)))
    if tag == _T_PTR:
        return PointerTag(bool(r.unpack("<B")[0]))
    if tag == _T_ERR:
        return ErrorVal(r.string())
    raise CanonicalizationError(f"unknown value tag {tag}")


def deserialize_state(data: bytes) -> CanonicalSyscallState:
    r = _Reader(data)
    (d,) = r.unpack("<B")
    try:
        sid = S[r.string()]
    except KeyError as e:
        raise CanonicalizationError(f"unknown canonical id {e}") from None
    (n,) = r.unpack("<I")
    vals = tuple(_read_value(r) for _ in range(n))
    if r.pos != len(data):
        raise CanonicalizationError("trailing bytes after canonical state")
    return CanonicalSyscallState(sid, vals, Direction.EXIT if d else Direction.ENTRY)


# verdicts


class Reason(enum.IntEnum):
    SyscallIdMismatch = 1
    ArgCountMismatch = 2
    ValueMismatch = 3
    BufferMismatch = 4
    UnknownSyscall = 5
    UnknownFlags = 6
    PathEscape = 7
    # monitor-level abort causes
    ChannelLoss = 16
    ProtocolError = 17


@dataclass(frozen=True)
class Verdict:
    reason: Reason | None = None
    arg: int | None = None  # 1-based position in norm_args
    offset: int | None = None

    @property
    def is_match(self) -> bool:
        return self.reason is None

    def __str__(self):
        if self.is_match:
            return "Match"
        extra = [f"arg {self.arg}"] if self.arg is not None else []
        if self.offset is not None:
            extra.append(f"offset {self.offset}")
        return f"Divergence({self.reason.name}{', ' if extra else ''}{', '.join(extra)})"


MATCH = Verdict()


def _first_diff(a: bytes, b: bytes) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return min(len(a), len(b))


def deep_equivalent(a: CanonicalSyscallState, b: CanonicalSyscallState) -> Verdict:
    if a.direction is not b.direction:
        raise ValueError("deep_equivalent compares two entry states or two exit states")
    if serialize_state(a) == serialize_state(b):
        return MATCH
    if a.id is not b.id:
        return Verdict(Reason.SyscallIdMismatch)
    if len(a.norm_args) != len(b.norm_args):
        return Verdict(Reason.ArgCountMismatch)
    for i, (x, y) in enumerate(zip(a.norm_args, b.norm_args), 1):
        if _value_bytes(x) == _value_bytes(y):
            continue
        if isinstance(x, BufferVal) and isinstance(y, BufferVal):
            return Verdict(Reason.BufferMismatch, i, _first_diff(x.data, y.data))
        return Verdict(Reason.ValueMismatch, i)
    raise AssertionError("states serialize differently but compare equal componentwise")


# inverse direction: canonical result -> a variant's native view


@dataclass(frozen=True)
class NativeResult:
    raw_result: int | None
    buffers: Mapping[int, bytes] = field(default_factory=dict)


def materialize_result(
    state: CanonicalSyscallState,
    key: SyscallKey,
    platform: PlatformSpec,
    fd_local: Callable[[FdVal], int],
) -> NativeResult:
    """Render a canonical exit state as the raw result a variant on ``platform``
    observes. ``key`` is the variant's own syscall (OPEN stays OPEN);
    ``fd_local`` maps a canonical descriptor to the variant's local number."""
    sig = SIGNATURES[key]
    if state.direction is not Direction.EXIT:
        raise ValueError("materialize_result takes an exit state")
    if not state.norm_args:
        return NativeResult(None)
    result, outputs = state.norm_args[0], state.norm_args[1:]
    if isinstance(result, ErrorVal):
        num = platform.errno.get(result.name)
        if num is None:
            if not result.name.startswith("ERRNO_"):
                raise CanonicalizationError(f"{platform.name} has no errno for {result.name}")
            num = int(result.name[6:])
        return NativeResult(to_register(-num, platform))
    if isinstance(result, FdVal):
        raw = fd_local(result)
    elif isinstance(result, PointerTag):
        raw = 0 if not result.nonnull else 0x1000
    elif isinstance(result, IntVal):
        raw = result.value
    else:
        raise CanonicalizationError(f"unexpected result value {result!r}")
    buffers = {}
    for idx, v in zip(sig.output_indices(), outputs):
        a = sig.args[idx - 1]
        if isinstance(v, ShadowStruct):
            buffers[idx] = encode_struct(platform, struct_defs()[a.struct], v)
        elif isinstance(v, BufferVal):
            buffers[idx] = v.data
    return NativeResult(to_register(raw, platform), buffers)


def state_summary(state: CanonicalSyscallState) -> str:
    return f"{state.direction.value}:{state.id.name}({len(state.norm_args)} args)"


__all__ = [
    "ArgKind", "Arg", "Signature", "SIGNATURES", "RetKind", "Direction",
    "IntVal", "FlagsVal", "PathVal", "FdVal", "BufferVal", "ArrayVal", "ShadowStruct",
    "PointerTag", "ErrorVal", "Value", "CWD_TOKEN", "FdInfo", "FdTranslation",
    "RawSyscallEvent", "CanonicalSyscallState", "Reason", "Verdict", "MATCH", "NativeResult",
    "canonicalize", "serialize_state", "deserialize_state", "deep_equivalent",
    "decode_struct", "encode_struct", "materialize_result", "sign_extend", "to_register",
    "resolve_path", "within_root", "signature", "struct_defs", "layout_for", "shadow_from_plain",
]
