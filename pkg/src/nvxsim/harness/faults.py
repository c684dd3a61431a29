"""Single-variant fault injection, modelling an exploit that lands on one ISA."""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

from ..canonical import AT_FDCWD, ArgKind, RawSyscallEvent, signature
from ..errors import BadTrigger, ConfigError
from ..platform import CanonicalSyscallId as S
from ..platform import Foldable, PlatformSpec, lookup_canonical_id

MUTATIONS = ("alter_buffer", "substitute", "alter_flag", "extra", "pointer_patch")

EXTRA_PATH = "/app/.nvx-probe"


@dataclass(frozen=True)
class FaultSpec:
    """``trigger`` is the 0-based ordinal of the intent to corrupt.

    alter_buffer   xor ``xor`` into byte ``offset`` of input buffer ``arg``
                   (1-based; default: the call's first captured buffer)
    substitute     issue syscall ``to`` instead, same raw arguments
    alter_flag     toggle flag ``flag`` (by name) or raw ``bit`` in the
                   call's flags argument
    extra          issue UNLINKAT(``path``) before the intent
    pointer_patch  overwrite the low byte of the code pointer used by an
                   ``indirect_call`` intent with ``low_byte``
    """

    variant: str
    trigger: int
    mutation: str
    arg: int | None = None
    offset: int = 0
    xor: int = 0x01
    to: str | None = None
    flag: str | None = None
    bit: int | None = None
    path: str = EXTRA_PATH
    low_byte: int | None = None

    def __post_init__(self):
        if self.mutation not in MUTATIONS:
            raise ConfigError(f"unknown mutation {self.mutation!r}")

    @classmethod
    def from_dict(cls, d) -> FaultSpec:
        d = dict(d)
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"fault: {e}") from None


def inject_fault(scenario, f: FaultSpec):
    """Copy of ``scenario`` with ``f`` attached to its target variant only."""
    names = [v.name for v in scenario.variants]
    if f.variant not in names:
        raise ConfigError(f"fault targets unknown variant {f.variant!r}")
    n = len(scenario.program_with_exit())
    if not 0 <= f.trigger < n:
        raise BadTrigger(f"trigger {f.trigger} outside program of {n} intents")
    out = copy.deepcopy(scenario)
    for v in out.variants:
        if v.name == f.variant:
            v.faults = list(v.faults) + [f]
    return out


def extra_events(faults, renderer) -> list[RawSyscallEvent]:
    from .program import Intent

    return [renderer.render(Intent("unlinkat", {"path": f.path})) for f in faults if f.mutation == "extra"]


def patched_pointer(faults, addr: int | None) -> int | None:
    for f in faults:
        if f.mutation == "pointer_patch" and addr is not None:
            return (addr & ~0xFF) | (f.low_byte & 0xFF)
    return addr


def _flag_index(key) -> int | None:
    sig = signature(key)
    for i, a in enumerate(sig.args, 1):
        if a.kind is ArgKind.FLAGS:
            return i
    return None


def apply_event_faults(faults, event: RawSyscallEvent, platform: PlatformSpec) -> RawSyscallEvent:
    for f in faults:
        if f.mutation == "alter_buffer":
            bufs = dict(event.captured_buffers)
            idx = f.arg if f.arg is not None else min(bufs, default=None)
            if idx is None or not bufs.get(idx):
                raise BadTrigger("alter_buffer needs a call with an input buffer")
            data = bytearray(bufs[idx])
            data[f.offset % len(data)] ^= f.xor
            bufs[idx] = bytes(data)
            event = replace(event, captured_buffers=bufs)
        elif f.mutation == "substitute":
            n = platform.number_of(S[f.to])
            if n is None:
                raise BadTrigger(f"{platform.name} cannot issue {f.to}")
            # registers the original call left unset read as zero
            arity = len(signature(lookup_canonical_id(platform, n)).args)
            args = tuple(event.args) + (0,) * (arity - len(event.args))
            event = replace(event, raw_number=n, args=args)
        elif f.mutation == "alter_flag":
            key = lookup_canonical_id(platform, event.raw_number)
            idx = _flag_index(key)
            if idx is None:
                raise BadTrigger(f"{key.name} has no flags argument")
            table_key = key.target if isinstance(key, Foldable) else key
            table_idx = idx + 1 if isinstance(key, Foldable) else idx
            if f.flag is not None:
                bits = {name: bit for bit, name in platform.flag_table(table_key, table_idx).items()}
                if f.flag not in bits:
                    raise BadTrigger(f"{platform.name} has no {f.flag} for {table_key.name}")
                bit = bits[f.flag]
            else:
                bit = f.bit
            args = list(event.args)
            args[idx - 1] ^= bit
            event = replace(event, args=tuple(args))
    return event


__all__ = ["FaultSpec", "inject_fault", "MUTATIONS", "AT_FDCWD"]
