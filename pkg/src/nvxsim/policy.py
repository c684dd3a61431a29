"""Sensitivity and replication classes for canonical syscalls.

The table lives in ``data/policy.toml``; each row gives a sensitivity class, a
default replication class and optional argument predicates (see the comment
block in that file).
"""

from __future__ import annotations

import enum
import posixpath
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .canonical import CanonicalSyscallState, FdTranslation, FdVal, FlagsVal, PathVal
from .errors import ConfigError
from .platform import CanonicalSyscallId as S
from .vfs import StaticFileManifest


class Sensitivity(enum.Enum):
    HIGH = "High"
    MODERATE = "Moderate"
    NONE = "None"


class Replication(enum.Enum):
    REPLICATE_IO = "ReplicateIO"
    REPLICATE_MUTABLE_STATE = "ReplicateMutableState"
    LOCAL_EXECUTE = "LocalExecute"
    CACHED_IMMUTABLE = "CachedImmutable"

    @property
    def replicated(self) -> bool:
        return self in (Replication.REPLICATE_IO, Replication.REPLICATE_MUTABLE_STATE)


WRITE_FLAGS = frozenset({"WRONLY", "RDWR", "CREAT", "TRUNC", "APPEND"})
IMMUTABLE_CALLS = frozenset({S.GETPID, S.GETPPID})


@dataclass(frozen=True)
class PolicyRow:
    sensitivity: Sensitivity
    replication: Replication
    on_static: Replication | None = None
    on_static_pfa: Replication | None = None
    with_pfa: Replication | None = None
    extrapolated: bool = False


def _row(name: str, spec: Mapping) -> PolicyRow:
    try:
        def rep(key):
            v = spec.get(key)
            return None if v is None else Replication(v)

        row = PolicyRow(
            Sensitivity(spec["sensitivity"]),
            Replication(spec["replication"]),
            rep("on_static"),
            rep("on_static_pfa"),
            rep("with_pfa"),
            bool(spec.get("extrapolated", False)),
        )
    except (KeyError, ValueError) as e:
        raise ConfigError(f"policy row {name}: {e}") from None
    sid = S[name]
    classes = {row.replication, row.on_static, row.on_static_pfa, row.with_pfa} - {None}
    if Replication.CACHED_IMMUTABLE in classes and sid not in IMMUTABLE_CALLS:
        raise ConfigError(f"policy row {name}: CachedImmutable is reserved for immutable process state")
    return row


def load_policy(path: str | Path | None = None) -> dict[S, PolicyRow]:
    if path is None:
        doc = tomllib.loads((resources.files("nvxsim") / "data" / "policy.toml").read_text())
    else:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    table = {S[name]: _row(name, spec) for name, spec in doc.items()}
    missing = set(S) - set(table)
    if missing:
        raise ConfigError(f"policy table lacks {sorted(m.name for m in missing)}")
    return table


_DEFAULT: dict[S, PolicyRow] | None = None


def default_policy() -> dict[S, PolicyRow]:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_policy()
    return _DEFAULT


def classify_sensitivity(sid: S, state: CanonicalSyscallState | None = None, table=None) -> Sensitivity:
    return (table or default_policy())[sid].sensitivity


def effective_sensitivity(sens: Sensitivity, acc_enabled: bool) -> Sensitivity:
    """Without asynchronous cross-checking, moderate calls run in lockstep."""
    if sens is Sensitivity.MODERATE and not acc_enabled:
        return Sensitivity.HIGH
    return sens


def _static_target(sid: S, state: CanonicalSyscallState, manifest: StaticFileManifest, fds: FdTranslation | None) -> bool:
    args = state.norm_args
    if sid is S.OPENAT:
        if len(args) < 3 or not isinstance(args[1], PathVal) or not isinstance(args[2], FlagsVal):
            return False
        return manifest.is_static(args[1].path) and not (args[2].names & WRITE_FLAGS)
    if fds is None or not args or not isinstance(args[0], FdVal):
        return False
    info = fds.info(args[0].id)
    return info is not None and info.local and manifest.is_static(info.path)


def classify_replication(
    sid: S,
    state: CanonicalSyscallState,
    manifest: StaticFileManifest,
    *,
    pfa: bool = True,
    fds: FdTranslation | None = None,
    table=None,
) -> Replication:
    row = (table or default_policy())[sid]
    if row.on_static or row.on_static_pfa:
        if _static_target(sid, state, manifest, fds):
            if row.on_static:
                return row.on_static
            if pfa:
                return row.on_static_pfa
    if pfa and row.with_pfa:
        return row.with_pfa
    return row.replication


def record_mutations(sid: S, state: CanonicalSyscallState, manifest: StaticFileManifest, fds: FdTranslation | None):
    """Grow the written set for calls that modify the file tree."""
    args = state.norm_args
    if sid is S.OPENAT and len(args) >= 3 and isinstance(args[1], PathVal) and isinstance(args[2], FlagsVal):
        if args[2].names & WRITE_FLAGS:
            manifest.mark_written(args[1].path)
            if "CREAT" in args[2].names:
                manifest.mark_written(posixpath.dirname(args[1].path))
    elif sid in (S.MKDIRAT, S.UNLINKAT) and len(args) >= 2 and isinstance(args[1], PathVal):
        manifest.mark_written(args[1].path)
        manifest.mark_written(posixpath.dirname(args[1].path))
    elif sid is S.WRITE and fds is not None and args and isinstance(args[0], FdVal):
        info = fds.info(args[0].id)
        if info is not None and info.path and info.kind == "file":
            manifest.mark_written(info.path)
