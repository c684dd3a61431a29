"""ABI descriptors and per-platform lookups.

A :class:`PlatformSpec` is loaded from a TOML descriptor (see ``data/abi``)
with sections ``[platform]``, ``[syscalls]``, ``[flags.<ID>.<argidx>]``,
``[types]``, ``[conventions]``, ``[errno]`` and ``[constants]``. Specs are
immutable after load and may be shared between monitor threads.
"""

from __future__ import annotations

import enum
import hashlib
import json
import sys
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import (
    AbiError,
    InvalidStructDef,
    MismatchedDef,
    UnknownFlagBits,
    UnknownSyscall,
    UnknownType,
)


class CanonicalSyscallId(enum.Enum):
    READ = "READ"
    WRITE = "WRITE"
    OPENAT = "OPENAT"
    CLOSE = "CLOSE"
    FSTAT = "FSTAT"
    LSEEK = "LSEEK"
    GETCWD = "GETCWD"
    GETPID = "GETPID"
    GETPPID = "GETPPID"
    GETUID = "GETUID"
    SCHED_YIELD = "SCHED_YIELD"
    MMAP_ANON = "MMAP_ANON"
    MUNMAP = "MUNMAP"
    BRK = "BRK"
    SOCKET = "SOCKET"
    BIND = "BIND"
    LISTEN = "LISTEN"
    ACCEPT = "ACCEPT"
    RECVFROM = "RECVFROM"
    SENDTO = "SENDTO"
    DUP = "DUP"
    EXIT_GROUP = "EXIT_GROUP"
    GETTIMEOFDAY = "GETTIMEOFDAY"
    CLOCK_GETTIME = "CLOCK_GETTIME"
    NANOSLEEP = "NANOSLEEP"
    UNAME = "UNAME"
    MKDIRAT = "MKDIRAT"
    UNLINKAT = "UNLINKAT"


class Foldable(enum.Enum):
    """Platform syscalls with no canonical identity of their own."""

    OPEN = "OPEN"

    @property
    def target(self) -> CanonicalSyscallId:
        return _FOLD_TARGETS[self]


_FOLD_TARGETS = {Foldable.OPEN: CanonicalSyscallId.OPENAT}

SyscallKey = CanonicalSyscallId | Foldable


def syscall_key(name: str) -> SyscallKey:
    try:
        return CanonicalSyscallId[name]
    except KeyError:
        pass
    try:
        return Foldable[name]
    except KeyError:
        raise AbiError(f"unknown syscall name {name!r}") from None


@dataclass(frozen=True)
class TypeMetric:
    size: int
    align: int
    signed: bool = False


@dataclass(frozen=True)
class CallConvention:
    args: tuple[str, ...]
    result: tuple[str, ...]


@dataclass(frozen=True)
class SyscallConvention:
    number: str
    args: tuple[str, ...]
    result: str


@dataclass(frozen=True)
class PlatformSpec:
    name: str
    endianness: str
    pointer_width: int
    syscall_table: Mapping[int, SyscallKey]
    flag_tables: Mapping[tuple[CanonicalSyscallId, int], Mapping[int, str]]
    type_metrics: Mapping[str, TypeMetric]
    call_conv: CallConvention
    syscall_conv: SyscallConvention
    errno: Mapping[str, int] = field(default_factory=dict)
    constants: Mapping[str, int] = field(default_factory=dict)
    digest: str = ""

    def __post_init__(self):
        numbers: dict[SyscallKey, int] = {}
        for raw, key in self.syscall_table.items():
            if key in numbers:
                raise AbiError(f"{self.name}: {key.name} mapped from {numbers[key]:#x} and {raw:#x}")
            numbers[key] = raw
        object.__setattr__(self, "_numbers", numbers)
        object.__setattr__(self, "_errno_names", {v: k for k, v in self.errno.items()})

    def __hash__(self):
        return hash((self.name, self.digest))

    def __eq__(self, other):
        return isinstance(other, PlatformSpec) and (self.name, self.digest) == (other.name, other.digest)

    @property
    def byteorder(self) -> str:
        return self.endianness

    @property
    def word_mask(self) -> int:
        return (1 << (8 * self.pointer_width)) - 1

    def number_of(self, key: SyscallKey) -> int | None:
        """Reverse lookup: the raw number this platform uses for ``key``."""
        return self._numbers.get(key)

    def supports(self, key: SyscallKey) -> bool:
        return key in self._numbers

    def metric(self, type_name: str) -> TypeMetric:
        if type_name == "ptr" or type_name.endswith("*"):
            return TypeMetric(self.pointer_width, self.pointer_width, False)
        return self.type_metrics[type_name]

    def errno_name(self, number: int) -> str | None:
        return self._errno_names.get(number)

    def flag_table(self, sid: CanonicalSyscallId, arg_index: int) -> Mapping[int, str]:
        try:
            return self.flag_tables[(sid, arg_index)]
        except KeyError:
            raise AbiError(f"{self.name}: no flag table for {sid.name} arg {arg_index}") from None


def _int(value, where: str) -> int:
    if isinstance(value, bool):
        raise AbiError(f"{where}: expected integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            pass
    raise AbiError(f"{where}: expected integer, got {value!r}")


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def parse_platform(doc: Mapping, source: str = "<memory>") -> PlatformSpec:
    """Build a validated :class:`PlatformSpec` from a parsed descriptor."""
    try:
        meta = doc["platform"]
        name = meta["name"]
        endianness = meta["endianness"]
        pointer_width = _int(meta["pointer_width"], f"{source}: pointer_width")
    except KeyError as e:
        raise AbiError(f"{source}: missing {e}") from None
    if endianness not in ("little", "big"):
        raise AbiError(f"{source}: endianness must be little or big")
    if not _is_pow2(pointer_width):
        raise AbiError(f"{source}: pointer_width {pointer_width} is not a power of two")

    table: dict[int, SyscallKey] = {}
    for sname, raw in doc.get("syscalls", {}).items():
        raw = _int(raw, f"{source}: syscalls.{sname}")
        if raw in table:
            raise AbiError(f"{source}: raw number {raw:#x} maps to both {table[raw].name} and {sname}")
        table[raw] = syscall_key(sname)

    flags: dict[tuple[CanonicalSyscallId, int], dict[int, str]] = {}
    for sname, by_arg in doc.get("flags", {}).items():
        sid = syscall_key(sname)
        if isinstance(sid, Foldable):
            raise AbiError(f"{source}: flag tables belong to canonical ids, not {sname}")
        for idx, entries in by_arg.items():
            bits: dict[int, str] = {}
            for fname, bit in entries.items():
                bit = _int(bit, f"{source}: flags.{sname}.{idx}.{fname}")
                if bit <= 0:
                    raise AbiError(f"{source}: flag {fname} must be a nonzero bitmask")
                if bit in bits:
                    raise AbiError(f"{source}: flag bit {bit:#x} listed twice in {sname}.{idx}")
                bits[bit] = fname
            flags[(sid, int(idx))] = bits

    metrics: dict[str, TypeMetric] = {}
    for tname, spec in doc.get("types", {}).items():
        size = _int(spec["size"], f"{source}: types.{tname}.size")
        align = _int(spec["align"], f"{source}: types.{tname}.align")
        if not _is_pow2(align) or size % align:
            raise AbiError(f"{source}: type {tname} has alignment {align} incompatible with size {size}")
        metrics[tname] = TypeMetric(size, align, bool(spec.get("signed", False)))

    conv = doc.get("conventions", {})
    try:
        call_conv = CallConvention(tuple(conv["call_args"]), tuple(conv["call_result"]))
        sys_conv = SyscallConvention(conv["syscall_number"], tuple(conv["syscall_args"]), conv["syscall_result"])
    except KeyError as e:
        raise AbiError(f"{source}: conventions missing {e}") from None
    if sys_conv.number in sys_conv.args:
        raise AbiError(f"{source}: syscall number register {sys_conv.number} doubles as an argument register")

    errno = {k: _int(v, f"{source}: errno.{k}") for k, v in doc.get("errno", {}).items()}
    constants = {k: _int(v, f"{source}: constants.{k}") for k, v in doc.get("constants", {}).items()}
    digest = hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()

    return PlatformSpec(
        name=name,
        endianness=endianness,
        pointer_width=pointer_width,
        syscall_table=table,
        flag_tables=flags,
        type_metrics=metrics,
        call_conv=call_conv,
        syscall_conv=sys_conv,
        errno=errno,
        constants=constants,
        digest=digest,
    )


def builtin_platform_names() -> list[str]:
    root = resources.files("nvxsim") / "data" / "abi"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


@lru_cache(maxsize=None)
def _load_builtin(name: str) -> PlatformSpec:
    res = resources.files("nvxsim") / "data" / "abi" / f"{name}.toml"
    if not res.is_file():
        raise AbiError(f"no builtin ABI descriptor named {name!r}")
    return parse_platform(tomllib.loads(res.read_text()), source=f"{name}.toml")


def load_platform(name_or_path: str | Path) -> PlatformSpec:
    """Load a builtin descriptor by name (``"x86_64"``) or a descriptor file."""
    p = Path(name_or_path)
    if p.suffix == ".toml" or p.exists():
        with open(p, "rb") as f:
            return parse_platform(tomllib.load(f), source=str(p))
    return _load_builtin(str(name_or_path))


# syscall and flag lookups


def lookup_canonical_id(platform: PlatformSpec, raw_number: int) -> SyscallKey:
    """Map a platform-local syscall number to its canonical identity.

    Returns a :class:`Foldable` marker for calls with no canonical id of their
    own (``OPEN``); canonicalization folds those into their target.
    """
    try:
        return platform.syscall_table[raw_number]
    except KeyError:
        raise UnknownSyscall(raw_number, platform.name) from None


def normalize_flags(platform: PlatformSpec, sid: CanonicalSyscallId, arg_index: int, raw: int) -> frozenset[str]:
    table = platform.flag_table(sid, arg_index)
    names = set()
    known = 0
    for bit, fname in table.items():
        known |= bit
        if raw & bit == bit:
            names.add(fname)
    residue = raw & ~known
    if residue:
        raise UnknownFlagBits(residue, f"{platform.name}:{sid.name}.{arg_index}")
    return frozenset(names)


def denormalize_flags(platform: PlatformSpec, sid: CanonicalSyscallId, arg_index: int, names: Iterable[str]) -> int:
    by_name = {v: k for k, v in platform.flag_table(sid, arg_index).items()}
    raw = 0
    for n in names:
        try:
            raw |= by_name[n]
        except KeyError:
            raise AbiError(f"{platform.name}: no flag {n!r} for {sid.name} arg {arg_index}") from None
    return raw


# struct layouts


@dataclass(frozen=True)
class FieldDef:
    name: str
    type: str
    count: int | None = None

    @property
    def length(self) -> int:
        return 1 if self.count is None else self.count


@dataclass(frozen=True)
class StructDef:
    name: str
    fields: tuple[FieldDef, ...]

    def __post_init__(self):
        if not self.fields:
            raise InvalidStructDef(f"struct {self.name} has no fields")
        seen = set()
        for f in self.fields:
            if f.name in seen:
                raise InvalidStructDef(f"struct {self.name}: duplicate field {f.name}")
            seen.add(f.name)
            if f.count is not None and f.count < 1:
                raise InvalidStructDef(f"struct {self.name}: field {f.name} has array length {f.count}")

    @classmethod
    def from_spec(cls, name: str, spec: Mapping) -> StructDef:
        """Parse ``{"fields": [[name, type], [name, type, n], ...]}``.

        Unions, packed structs and bitfields are rejected.
        """
        for unsupported in ("union", "packed", "aligned"):
            if spec.get(unsupported):
                raise InvalidStructDef(f"struct {name}: {unsupported} structs are not supported")
        fields = []
        for entry in spec.get("fields", []):
            if isinstance(entry, Mapping):
                if "bits" in entry:
                    raise InvalidStructDef(f"struct {name}: bitfield {entry.get('name')} not supported")
                fields.append(FieldDef(entry["name"], entry["type"], entry.get("count")))
                continue
            if len(entry) not in (2, 3):
                raise InvalidStructDef(f"struct {name}: malformed field {entry!r}")
            if ":" in entry[1]:
                raise InvalidStructDef(f"struct {name}: bitfield {entry[0]} not supported")
            fields.append(FieldDef(entry[0], entry[1], entry[2] if len(entry) == 3 else None))
        return cls(name, tuple(fields))


def load_struct_defs(path: str | Path | None = None) -> dict[str, StructDef]:
    if path is None:
        doc = tomllib.loads((resources.files("nvxsim") / "data" / "structs.toml").read_text())
    else:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    if "struct" in doc and isinstance(doc["struct"], list):
        return {s["name"]: StructDef.from_spec(s["name"], s) for s in doc["struct"]}
    return {name: StructDef.from_spec(name, spec) for name, spec in doc.items()}


@dataclass(frozen=True)
class StructLayout:
    name: str
    field_names: tuple[str, ...]
    offsets: tuple[int, ...]
    sizes: tuple[int, ...]
    size: int
    align: int


def align_up(value: int, align: int) -> int:
    return (value + align - 1) & -align


def compute_struct_layout(platform: PlatformSpec, sdef: StructDef) -> StructLayout:
    offset = 0
    struct_align = 1
    offsets, sizes = [], []
    for f in sdef.fields:
        try:
            m = platform.metric(f.type)
        except KeyError:
            raise UnknownType(f.name, f.type) from None
        offset = align_up(offset, m.align)
        offsets.append(offset)
        sizes.append(m.size * f.length)
        offset += m.size * f.length
        struct_align = max(struct_align, m.align)
    return StructLayout(
        name=sdef.name,
        field_names=tuple(f.name for f in sdef.fields),
        offsets=tuple(offsets),
        sizes=tuple(sizes),
        size=align_up(offset, struct_align),
        align=struct_align,
    )


@dataclass(frozen=True)
class FieldDiff:
    index: int  # 1-based field position
    name: str
    offset_a: int
    offset_b: int
    size_a: int
    size_b: int


@dataclass(frozen=True)
class LayoutDiff:
    struct: str
    fields: tuple[FieldDiff, ...]
    size_a: int
    size_b: int

    @property
    def size_delta(self) -> int:
        return self.size_b - self.size_a

    def __bool__(self) -> bool:
        return bool(self.fields) or self.size_a != self.size_b


def layout_diverges(a: StructLayout, b: StructLayout) -> LayoutDiff:
    if len(a.offsets) != len(b.offsets) or a.field_names != b.field_names:
        raise MismatchedDef(f"layouts {a.name} and {b.name} come from different definitions")
    diffs = tuple(
        FieldDiff(i + 1, name, oa, ob, sa, sb)
        for i, (name, oa, ob, sa, sb) in enumerate(zip(a.field_names, a.offsets, b.offsets, a.sizes, b.sizes))
        if oa != ob or sa != sb
    )
    return LayoutDiff(a.name, diffs, a.size, b.size)
