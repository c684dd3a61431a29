"""Leader and follower monitors.

Every call that needs cross-monitor traffic gets a *checkpoint* number, the
same on every variant because the programs are deterministic. STATE, VERDICT
and RESULT payloads start with that u64 checkpoint so the two ends can pair
them; warm cache hits and unreplicated ``None``-sensitivity calls take no
checkpoint and send nothing.

Per call and follower the traffic is:

=========================  ====================================
High                       STATE, then VERDICT after the leader ran
Moderate, ACC on           STATE only (the leader checks it later)
None                       nothing
replicated / cold cache    one extra RESULT from the leader
=========================  ====================================
"""

from __future__ import annotations

import enum
import itertools
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Union

from .canonical import (
    CanonicalSyscallState,
    Direction,
    FdInfo,
    FdTranslation,
    FdVal,
    FlagsVal,
    NativeResult,
    PathVal,
    RawSyscallEvent,
    Reason,
    canonicalize,
    deep_equivalent,
    deserialize_state,
    materialize_result,
    serialize_state,
    sign_extend,
)
from .errors import (
    CanonicalizationError,
    NvxError,
    PathEscape,
    PeerDisconnected,
    ProtocolError,
    UnknownFlagBits,
    UnknownSyscall,
)
from .platform import CanonicalSyscallId as S
from .platform import PlatformSpec, SyscallKey, lookup_canonical_id
from .policy import (
    WRITE_FLAGS,
    Replication,
    Sensitivity,
    classify_replication,
    classify_sensitivity,
    default_policy,
    effective_sensitivity,
    record_mutations,
)
from .rccom import Channel, ChannelClass, MsgType, WireMessage
from .vfs import StaticFileManifest

_CK = struct.Struct("<Q")
_ABORT = struct.Struct("<BQ")
_NO_CK = (1 << 64) - 1

FD_CREATORS = frozenset({S.OPENAT, S.SOCKET, S.ACCEPT, S.DUP})


# actions


@dataclass(frozen=True)
class Proceed:
    pass


@dataclass(frozen=True)
class ProceedAsLocal:
    """Run locally although the call class is normally replicated (PFA)."""


@dataclass(frozen=True)
class Skip:
    inject: CanonicalSyscallState


@dataclass(frozen=True)
class AwaitResult:
    pass


@dataclass(frozen=True)
class Abort:
    reason: Reason
    detail: str = ""


Action = Union[Proceed, ProceedAsLocal, Skip, AwaitResult, Abort]


class Status(enum.Enum):
    RUNNING = "running"
    ABORTED = "aborted"
    FINISHED = "finished"


@dataclass
class Incident:
    reason: Reason
    checkpoint: int | None
    detected_by: str
    peer: str | None = None
    arg: int | None = None
    offset: int | None = None
    leader_state: bytes | None = None
    follower_state: bytes | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "reason": self.reason.name,
            "checkpoint": self.checkpoint,
            "detected_by": self.detected_by,
            "peer": self.peer,
            "arg": self.arg,
            "offset": self.offset,
            "leader_state": None if self.leader_state is None else self.leader_state.hex(),
            "follower_state": None if self.follower_state is None else self.follower_state.hex(),
            "detail": self.detail,
        }


class _Diverged(Exception):
    def __init__(self, incident: Incident):
        super().__init__(incident.reason.name)
        self.incident = incident


@dataclass
class MonitorConfig:
    pfa: bool = True
    acc: bool = True
    timeout: float = 10.0
    policy: dict | None = None
    # a follower stuck this long on the RESULT of an unchecked call sends its
    # STATE anyway, so a leader blocked on a checked call at the same
    # checkpoint can tell the two streams apart
    stall: float = 1.0


@dataclass
class MonitorState:
    role: str
    fdmap: FdTranslation
    manifest: StaticFileManifest
    pfa_enabled: bool = True
    acc_enabled: bool = True
    cache: dict = field(default_factory=dict)  # S -> exit state
    status: Status = Status.RUNNING
    incident: Incident | None = None
    checkpoint: int = 0

    @property
    def running(self) -> bool:
        return self.status is Status.RUNNING


@dataclass
class CallRecord:
    """What one syscall cost on the wire, seen from one monitor."""

    ordinal: int
    sid: S | None
    sensitivity: Sensitivity | None = None
    replication: Replication | None = None
    checkpoint: int | None = None
    action: str = ""
    intent: int | None = None  # program ordinal, filled in by the harness
    injected: bool = False
    sent: Counter = field(default_factory=Counter)
    received: Counter = field(default_factory=Counter)
    result: int | None = None  # raw return value the variant observed

    @property
    def messages(self) -> int:
        return sum(self.sent.values()) + sum(self.received.values())

    def to_dict(self) -> dict:
        return {
            "ordinal": self.ordinal,
            "syscall": self.sid.name if self.sid else None,
            "sensitivity": self.sensitivity.value if self.sensitivity else None,
            "replication": self.replication.value if self.replication else None,
            "checkpoint": self.checkpoint,
            "action": self.action,
            "intent": self.intent,
            "injected": self.injected,
            "sent": {k.name: v for k, v in sorted(self.sent.items())},
            "received": {k.name: v for k, v in sorted(self.received.items())},
            "messages": self.messages,
            "result": self.result,
        }


@dataclass
class _Call:
    event: RawSyscallEvent
    key: SyscallKey
    state: CanonicalSyscallState
    sens: Sensitivity
    rep: Replication
    checkpoint: int | None
    record: CallRecord
    exempt: bool = False
    warm: bool = False


class LogicalClock:
    """Process-wide event counter used to order trace points across actors."""

    def __init__(self):
        self._n = itertools.count(1)
        self._lock = threading.Lock()
        self.trace: list[tuple[int, str, str, int | None]] = []

    def tick(self, kind: str, who: str, checkpoint: int | None) -> int:
        with self._lock:
            t = next(self._n)
            self.trace.append((t, kind, who, checkpoint))
            return t


def _abort_payload(reason: Reason, checkpoint: int | None, detail: str = "") -> bytes:
    return _ABORT.pack(int(reason), _NO_CK if checkpoint is None else checkpoint) + detail.encode()[:512]


def parse_abort(payload: bytes) -> tuple[Reason, int | None, str]:
    if len(payload) < _ABORT.size:
        raise ProtocolError("short ABORT payload")
    r, ck = _ABORT.unpack_from(payload)
    return Reason(r), None if ck == _NO_CK else ck, payload[_ABORT.size:].decode(errors="replace")


def _split_ck(payload: bytes) -> tuple[int, bytes]:
    if len(payload) < _CK.size:
        raise ProtocolError("payload lacks a checkpoint")
    return _CK.unpack_from(payload)[0], payload[_CK.size:]


_CANON_ERRORS = {
    UnknownSyscall: Reason.UnknownSyscall,
    UnknownFlagBits: Reason.UnknownFlags,
    PathEscape: Reason.PathEscape,
}


def _reason_for(e: Exception) -> Reason:
    for cls, reason in _CANON_ERRORS.items():
        if isinstance(e, cls):
            return reason
    return Reason.ValueMismatch


class _Monitor:
    role = ""

    def __init__(
        self,
        name: str,
        platform: PlatformSpec,
        fs,
        manifest: StaticFileManifest,
        config: MonitorConfig | None = None,
        *,
        clock: LogicalClock | None = None,
    ):
        self.name = name
        self.platform = platform
        self.fs = fs
        self.config = config or MonitorConfig()
        self.policy = self.config.policy or default_policy()
        self.st = MonitorState(
            self.role, FdTranslation(), manifest.copy(), self.config.pfa, self.config.acc
        )
        self.clock = clock or LogicalClock()
        self.calls: list[CallRecord] = []
        self._by_ck: dict[int, CallRecord] = {}
        self._cur: _Call | None = None
        self._ordinal = 0
        self.aborted_at: int | None = None

    # helpers shared by both roles

    @property
    def status(self) -> Status:
        return self.st.status

    @property
    def incident(self) -> Incident | None:
        return self.st.incident

    def _count(self, ck: int | None, direction: str, mtype: MsgType):
        rec = self._by_ck.get(ck) if ck is not None else None
        if rec is not None:
            getattr(rec, direction)[mtype] += 1

    def _classify(self, state: CanonicalSyscallState) -> tuple[Sensitivity, Replication, bool]:
        sid = state.id
        sens = effective_sensitivity(classify_sensitivity(sid, state, self.policy), self.st.acc_enabled)
        rep = classify_replication(
            sid, state, self.st.manifest, pfa=self.st.pfa_enabled, fds=self.st.fdmap, table=self.policy
        )
        exempt = rep is Replication.LOCAL_EXECUTE and self.policy[sid].replication.replicated
        return sens, rep, exempt

    def _begin(self, event: RawSyscallEvent) -> _Call:
        rec = CallRecord(self._ordinal, None)
        self.calls.append(rec)
        key = lookup_canonical_id(event.platform, event.raw_number)
        state = canonicalize(event, self.fs, self.st.fdmap)
        self._ordinal += 1
        sens, rep, exempt = self._classify(state)
        rec.sid, rec.sensitivity, rec.replication = state.id, sens, rep
        warm = rep is Replication.CACHED_IMMUTABLE and state.id in self.st.cache
        ck = None
        if not warm and (sens is not Sensitivity.NONE or rep.replicated or rep is Replication.CACHED_IMMUTABLE):
            self.st.checkpoint += 1
            ck = self.st.checkpoint
            self._by_ck[ck] = rec
        rec.checkpoint = ck
        record_mutations(state.id, state, self.st.manifest, self.st.fdmap)
        return _Call(event, key, state, sens, rep, ck, rec, exempt, warm)

    def _fd_info(self, call: _Call) -> FdInfo:
        sid, args = call.state.id, call.state.norm_args
        if sid is S.OPENAT:
            names = args[2].names if isinstance(args[2], FlagsVal) else frozenset()
            path = args[1].path if isinstance(args[1], PathVal) else None
            return FdInfo(
                "dir" if "DIRECTORY" in names else "file",
                path,
                local=call.rep is Replication.LOCAL_EXECUTE,
                writable=bool(names & WRITE_FLAGS),
            )
        if sid is S.DUP and isinstance(args[0], FdVal):
            src = self.st.fdmap.info(args[0].id)
            if src is not None:
                return FdInfo(src.kind, src.path, src.local, src.writable)
        return FdInfo("socket" if sid in (S.SOCKET, S.ACCEPT) else "file")

    def _track_local(self, call: _Call, native: NativeResult):
        """Descriptor bookkeeping after the variant's own kernel ran the call."""
        if native.raw_result is None:
            return
        r = sign_extend(native.raw_result, self.platform.pointer_width)
        sid = call.state.id
        if sid in FD_CREATORS and r >= 0:
            self.st.fdmap.assign(r, self._fd_info(call))
        elif sid is S.CLOSE and r == 0 and isinstance(call.state.norm_args[0], FdVal):
            local = self.st.fdmap.local_of(call.state.norm_args[0].id)
            if local is not None:
                self.st.fdmap.release(local)

    def _abort(self, incident: Incident) -> Abort:
        self.st.status = Status.ABORTED
        self.st.incident = incident
        self.aborted_at = self._cur.record.ordinal if self._cur is not None else self._ordinal
        self._notify_abort(incident)
        return Abort(incident.reason, incident.detail)

    def _notify_abort(self, incident: Incident):
        raise NotImplementedError

    def _canon_failure(self, e: Exception) -> Abort:
        ck = self.st.checkpoint + 1
        return self._abort(Incident(_reason_for(e), ck, self.name, detail=str(e)))

    def on_entry(self, event: RawSyscallEvent) -> Action:
        """Classify and cross-check a call at syscall entry."""
        if not self.st.running:
            return Abort(self.st.incident.reason)
        self._cur = None
        pending = self.poll_abort()
        if pending is not None:
            return pending
        try:
            call = self._begin(event)
        except (UnknownSyscall, UnknownFlagBits, PathEscape, CanonicalizationError) as e:
            return self._canon_failure(e)
        self._cur = call
        if call.warm:
            action: Action = Skip(self.st.cache[call.state.id])
        else:
            action = self._entry(call)
        call.record.action = type(action).__name__
        return action

    def complete(self, action: Action, execute: Callable[[], NativeResult]) -> NativeResult | Abort:
        """Carry an entry action through to the result the variant observes."""
        if isinstance(action, Abort):
            return action
        if isinstance(action, Skip):
            res = self.inject(action.inject)
        elif isinstance(action, AwaitResult):
            res = self.await_result()
        else:
            res = self.on_exit(execute())
        if isinstance(res, NativeResult) and self._cur is not None:
            self._cur.record.result = res.raw_result
        return res

    def inject(self, state: CanonicalSyscallState) -> NativeResult:
        call = self._cur
        return materialize_result(state, call.key, self.platform, self._fd_local_strict)

    def _fd_local_strict(self, fv: FdVal) -> int:
        local = self.st.fdmap.local_of(fv.id) if fv.id is not None else fv.raw
        if local is None:
            raise CanonicalizationError(f"no local descriptor for canonical fd {fv.id}")
        return local

    def _entry(self, call: _Call) -> Action:
        raise NotImplementedError

    def on_exit(self, native: NativeResult) -> NativeResult | Abort:
        raise NotImplementedError

    def await_result(self) -> NativeResult | Abort:
        raise NotImplementedError

    def poll_abort(self) -> Abort | None:
        raise NotImplementedError

    def finish(self):
        raise NotImplementedError


class _Peer:
    def __init__(self, name: str, channel: Channel):
        self.name = name
        self.ch = channel
        self.states: dict[int, CanonicalSyscallState] = {}
        self.verified: set[int] = set()
        self.last_ck = 0
        self.done = False
        self.gone = False


class LeaderMonitor(_Monitor):
    """Runs the real I/O, checks every follower against itself, and
    broadcasts results."""

    role = "leader"

    def __init__(self, name, platform, fs, manifest, channels: dict[str, Channel], config=None, *, clock=None):
        super().__init__(name, platform, fs, manifest, config, clock=clock)
        self.peers = [_Peer(n, ch) for n, ch in channels.items()]
        self._own: dict[int, tuple[CanonicalSyscallState, Sensitivity]] = {}
        self.results: dict[int, bytes] = {}  # checkpoint -> serialized exit state sent as RESULT
        self._stateless: dict[int, CanonicalSyscallState] = {}  # checkpoints where we sent no STATE

    @property
    def pending_async(self) -> list[int]:
        """Moderate checkpoints still waiting on some follower's STATE."""
        return sorted(
            k for k, (_, sens) in self._own.items()
            if sens is Sensitivity.MODERATE and any(k not in p.verified for p in self.peers)
        )

    # comparison bookkeeping

    def _compare(self, p: _Peer, k: int):
        if k not in self._own or k not in p.states:
            return
        mine, _ = self._own[k]
        theirs = p.states.pop(k)
        v = deep_equivalent(mine, theirs)
        p.verified.add(k)
        if all(k in q.verified for q in self.peers):
            self._own.pop(k, None)
        if not v.is_match:
            raise _Diverged(Incident(
                v.reason, k, self.name, p.name, v.arg, v.offset,
                serialize_state(mine), serialize_state(theirs),
            ))

    def _misaligned(self, p: _Peer, k: int, mine, theirs, detail: str):
        raise _Diverged(Incident(
            Reason.SyscallIdMismatch, k, self.name, p.name,
            leader_state=serialize_state(mine) if mine is not None else None,
            follower_state=serialize_state(theirs) if theirs is not None else None,
            detail=detail,
        ))

    def _compare_stateless(self, p: _Peer, k: int):
        """A STATE for a call we did not check: a stall hint if it matches."""
        mine = self._stateless[k]
        theirs = p.states.pop(k)
        p.verified.add(k)
        v = deep_equivalent(mine, theirs)
        if not v.is_match:
            raise _Diverged(Incident(
                v.reason, k, self.name, p.name, v.arg, v.offset,
                serialize_state(mine), serialize_state(theirs), "follower checked a call this side did not",
            ))

    def _check_alignment(self, p: _Peer, prev: int, k: int):
        """The follower checked in at ``k`` after ``prev``; both sides must agree
        on which checkpoints carry a STATE."""
        for j, (mine, _) in self._own.items():
            if prev < j < k and j not in p.verified:
                self._misaligned(p, j, mine, None, "follower skipped a checked call")

    def _handle(self, p: _Peer, msg: WireMessage):
        t = msg.msg_type
        if t is MsgType.STATE:
            try:
                k, body = _split_ck(msg.payload)
                state = deserialize_state(body)
            except (NvxError, ValueError, UnicodeDecodeError) as e:
                raise _Diverged(Incident(Reason.ProtocolError, None, self.name, p.name, detail=f"bad STATE: {e}"))
            if k <= p.last_ck:
                raise _Diverged(Incident(Reason.ProtocolError, k, self.name, p.name, detail="checkpoint went backwards"))
            prev, p.last_ck = p.last_ck, k
            self._check_alignment(p, prev, k)
            self._count(k, "received", t)
            p.states[k] = state
            if k in self._stateless:
                self._compare_stateless(p, k)
            else:
                self._compare(p, k)
        elif t is MsgType.ABORT:
            reason, k, detail = parse_abort(msg.payload)
            # the follower gave up; anything it sent before may explain why
            while True:
                try:
                    m = p.ch.recv(ChannelClass.SYNC, block=False)
                except (PeerDisconnected, ProtocolError):
                    break
                if m is None:
                    break
                self._handle(p, m)
            p.done = True
            raise _Diverged(Incident(reason, k, p.name, p.name, detail=detail or "follower abort"))
        elif t is MsgType.BYE:
            p.done = True
        else:
            raise _Diverged(Incident(Reason.ProtocolError, None, self.name, p.name, detail=f"unexpected {t.name}"))

    def _drain(self):
        for p in self.peers:
            if p.gone:
                continue
            while True:
                try:
                    msg = p.ch.recv(None, block=False)
                except PeerDisconnected:
                    p.gone = True
                    if not p.done:
                        raise _Diverged(Incident(Reason.ChannelLoss, None, self.name, p.name, detail="follower vanished"))
                    break
                except ProtocolError as e:
                    raise _Diverged(Incident(Reason.ProtocolError, None, self.name, p.name, detail=str(e)))
                if msg is None:
                    break
                self._handle(p, msg)

    def _wait_verified(self, p: _Peer, k: int):
        while k not in p.verified:
            if p.done:
                raise _Diverged(Incident(Reason.ProtocolError, k, self.name, p.name, detail="follower finished early"))
            try:
                msg = p.ch.recv(None, timeout=self.config.timeout)
            except PeerDisconnected:
                p.gone = True
                raise _Diverged(Incident(Reason.ChannelLoss, k, self.name, p.name, detail="follower vanished"))
            except ProtocolError as e:
                raise _Diverged(Incident(Reason.ProtocolError, k, self.name, p.name, detail=str(e)))
            if msg is None:
                raise _Diverged(Incident(Reason.ChannelLoss, k, self.name, p.name, detail="timed out waiting for STATE"))
            self._handle(p, msg)

    def _send(self, p: _Peer, msg: WireMessage, k: int | None):
        try:
            p.ch.send(msg)
        except PeerDisconnected:
            p.gone = True
            # a follower that aborted and hung up left its reason in our inbox
            self._drain_after_loss(p)
            raise _Diverged(Incident(Reason.ChannelLoss, k, self.name, p.name, detail="send failed"))
        self._count(k, "sent", msg.msg_type)

    def _drain_after_loss(self, p: _Peer):
        while True:
            try:
                m = p.ch.recv(None, block=False)
            except (PeerDisconnected, ProtocolError):
                return
            if m is None:
                return
            self._handle(p, m)

    def _notify_abort(self, incident: Incident):
        payload = _abort_payload(incident.reason, incident.checkpoint, incident.detail)
        for p in self.peers:
            if p.gone:
                continue
            try:
                p.ch.send(WireMessage.abort(payload))
            except (PeerDisconnected, ProtocolError):
                p.gone = True

    # protocol steps

    def poll_abort(self) -> Abort | None:
        try:
            self._drain()
        except _Diverged as d:
            return self._abort(d.incident)
        return None

    def _entry(self, call: _Call) -> Action:
        k = call.checkpoint
        if k is None:
            return Proceed()
        try:
            self._drain()
            if call.sens is Sensitivity.NONE:
                self._stateless[k] = call.state
                for p in self.peers:
                    if k in p.states:
                        self._compare_stateless(p, k)
                return Proceed()
            self._own[k] = (call.state, call.sens)
            for p in self.peers:
                if p.last_ck > k and k not in p.states:
                    self._misaligned(p, k, call.state, None, "follower skipped a checked call")
                self._compare(p, k)
            if call.sens is Sensitivity.HIGH:
                for p in self.peers:
                    self._wait_verified(p, k)
        except _Diverged as d:
            return self._abort(d.incident)
        return Proceed()

    def on_exit(self, native: NativeResult) -> NativeResult | Abort:
        call = self._cur
        self.clock.tick("effect", self.name, call.checkpoint)
        self._track_local(call, native)
        k = call.checkpoint
        if k is None:
            return native
        exit_state = canonicalize(call.event.exit(native.raw_result, native.buffers), self.fs, self.st.fdmap)
        try:
            if call.sens is Sensitivity.HIGH:
                for p in self.peers:
                    self._send(p, WireMessage(MsgType.VERDICT, _CK.pack(k) + b"\0"), k)
            if call.rep.replicated or call.rep is Replication.CACHED_IMMUTABLE:
                body = serialize_state(exit_state)
                self.results[k] = body
                for p in self.peers:
                    self._send(p, WireMessage(MsgType.RESULT, _CK.pack(k) + body), k)
                if call.rep is Replication.CACHED_IMMUTABLE:
                    self.st.cache[call.state.id] = exit_state
        except _Diverged as d:
            return self._abort(d.incident)
        return native

    def await_result(self):
        raise ProtocolError("the leader never awaits results")

    def finish(self):
        """Collect every follower's BYE (checking any late STATEs), then say BYE."""
        if self.st.running:
            try:
                for p in self.peers:
                    while not p.done:
                        try:
                            msg = p.ch.recv(None, timeout=self.config.timeout)
                        except PeerDisconnected:
                            p.gone = True
                            raise _Diverged(Incident(Reason.ChannelLoss, None, self.name, p.name, detail="no BYE"))
                        if msg is None:
                            raise _Diverged(Incident(Reason.ChannelLoss, None, self.name, p.name, detail="timed out waiting for BYE"))
                        self._handle(p, msg)
                for p in self.peers:
                    self._send(p, WireMessage(MsgType.BYE), None)
                self.st.status = Status.FINISHED
            except _Diverged as d:
                self._abort(d.incident)


class FollowerMonitor(_Monitor):
    """Ships its variant's state to the leader and consumes the leader's results."""

    role = "follower"

    def __init__(
        self, name, platform, fs, manifest, channel: Channel, config=None, *,
        clock=None, fd_alloc: Callable[[], int] | None = None, fd_free: Callable[[int], None] | None = None,
    ):
        super().__init__(name, platform, fs, manifest, config, clock=clock)
        self.ch = channel
        self._fd_alloc = fd_alloc or itertools.count(1000).__next__
        self._fd_free = fd_free or (lambda fd: None)
        self._virtual: set[int] = set()
        self.observed: dict[int, bytes] = {}  # checkpoint -> canonical form of what the variant saw

    def _notify_abort(self, incident: Incident):
        if incident.detected_by != self.name:
            return
        try:
            self.ch.send(WireMessage.abort(_abort_payload(incident.reason, incident.checkpoint, incident.detail)))
        except (PeerDisconnected, ProtocolError):
            pass

    def _leader_abort(self, msg: WireMessage) -> Abort:
        reason, k, detail = parse_abort(msg.payload)
        return self._abort(Incident(reason, k, "leader", detail=detail))

    def _recv(self, k: int | None, hint: CanonicalSyscallState | None = None) -> WireMessage | Abort:
        deadline = time.monotonic() + self.config.timeout
        while True:
            wait = deadline - time.monotonic()
            if hint is not None:
                wait = min(wait, self.config.stall)
            try:
                msg = self.ch.recv(None, timeout=max(wait, 0.0))
            except PeerDisconnected:
                return self._abort(Incident(Reason.ChannelLoss, k, self.name, detail="leader vanished"))
            except ProtocolError as e:
                return self._abort(Incident(Reason.ProtocolError, k, self.name, detail=str(e)))
            if msg is not None:
                break
            if hint is None or time.monotonic() >= deadline:
                return self._abort(Incident(Reason.ChannelLoss, k, self.name, detail="timed out"))
            try:
                self.ch.send(WireMessage(MsgType.STATE, _CK.pack(k) + serialize_state(hint)))
            except PeerDisconnected:
                return self._abort(Incident(Reason.ChannelLoss, k, self.name, detail="leader vanished"))
            self._count(k, "sent", MsgType.STATE)
            hint = None
        if msg.msg_type is MsgType.ABORT:
            return self._leader_abort(msg)
        return msg

    def _other_call(self, msg: WireMessage, k: int) -> Abort | None:
        """A RESULT naming a different syscall means the streams diverged."""
        if msg.msg_type is not MsgType.RESULT:
            return None
        try:
            _, body = _split_ck(msg.payload)
            theirs = deserialize_state(body)
        except (NvxError, ValueError, UnicodeDecodeError):
            return None
        mine = self._cur.state
        if theirs.id is mine.id:
            return None
        return self._abort(Incident(
            Reason.SyscallIdMismatch, k, self.name,
            leader_state=serialize_state(theirs), follower_state=serialize_state(mine),
            detail=f"leader is in {theirs.id.name}, variant is in {mine.id.name}",
        ))

    def _expect(self, mtype: MsgType, k: int, hint: CanonicalSyscallState | None = None) -> bytes | Abort:
        msg = self._recv(k, hint)
        if isinstance(msg, Abort):
            return msg
        if msg.msg_type is not mtype or mtype is MsgType.RESULT:
            other = self._other_call(msg, k)
            if other is not None:
                return other
        if msg.msg_type is not mtype:
            return self._abort(Incident(Reason.ProtocolError, k, self.name, detail=f"expected {mtype.name}, got {msg.msg_type.name}"))
        try:
            got, body = _split_ck(msg.payload)
        except ProtocolError as e:
            return self._abort(Incident(Reason.ProtocolError, k, self.name, detail=str(e)))
        if got != k:
            return self._abort(Incident(Reason.ProtocolError, k, self.name, detail=f"{mtype.name} for checkpoint {got}"))
        self._count(k, "received", mtype)
        return body

    def poll_abort(self) -> Abort | None:
        try:
            msg = self.ch.recv(ChannelClass.ERROR, block=False)
        except PeerDisconnected:
            return None
        except ProtocolError as e:
            return self._abort(Incident(Reason.ProtocolError, None, self.name, detail=str(e)))
        if msg is not None:
            return self._leader_abort(msg)
        return None

    def _entry(self, call: _Call) -> Action:
        k = call.checkpoint
        if k is None:
            return Proceed()
        if call.sens is not Sensitivity.NONE:
            self.clock.tick("state_send", self.name, k)
            try:
                self.ch.send(WireMessage(MsgType.STATE, _CK.pack(k) + serialize_state(call.state)))
            except PeerDisconnected:
                return self._abort(Incident(Reason.ChannelLoss, k, self.name, detail="leader vanished"))
            self._count(k, "sent", MsgType.STATE)
        if call.sens is Sensitivity.HIGH:
            got = self._expect(MsgType.VERDICT, k)
            if isinstance(got, Abort):
                return got
            if got[:1] != b"\0":
                return self._abort(Incident(Reason(got[0]), k, "leader", detail="divergent verdict"))
        if call.rep.replicated or call.rep is Replication.CACHED_IMMUTABLE:
            return AwaitResult()
        if call.sens is Sensitivity.HIGH:
            self.clock.tick("resume", self.name, k)
        return ProceedAsLocal() if call.exempt else Proceed()

    def _fd_local(self, fv: FdVal) -> int:
        if fv.id is None:
            return fv.raw
        local = self.st.fdmap.local_of(fv.id)
        if local is None:
            call = self._cur
            local = self._fd_alloc()
            self._virtual.add(local)
            info = self._fd_info(call)
            info.local = False
            self.st.fdmap.bind(local, fv.id, info)
        return local

    def follower_on_result(self, body: bytes) -> NativeResult | Abort:
        """Turn a RESULT body into the native result the variant observes."""
        call = self._cur
        k = call.checkpoint
        try:
            state = deserialize_state(body)
        except (NvxError, ValueError, UnicodeDecodeError) as e:
            return self._abort(Incident(Reason.ProtocolError, k, self.name, detail=f"bad RESULT: {e}"))
        if state.id is not call.state.id or state.direction is not Direction.EXIT:
            return self._abort(Incident(
                Reason.ProtocolError, k, self.name,
                detail=f"RESULT for {state.id.name}, variant is in {call.state.id.name}",
            ))
        try:
            native = materialize_result(state, call.key, self.platform, self._fd_local)
        except CanonicalizationError as e:
            return self._abort(Incident(Reason.ProtocolError, k, self.name, detail=str(e)))
        if call.state.id is S.CLOSE and isinstance(call.state.norm_args[0], FdVal) and native.raw_result == 0:
            local = self.st.fdmap.local_of(call.state.norm_args[0].id)
            if local is not None:
                self.st.fdmap.release(local)
                if local in self._virtual:
                    self._virtual.discard(local)
                    self._fd_free(local)
        if call.rep is Replication.CACHED_IMMUTABLE:
            self.st.cache[call.state.id] = state
        # re-canonicalize what the variant will see, for the transparency check
        seen = canonicalize(call.event.exit(native.raw_result, native.buffers), self.fs, self.st.fdmap)
        self.observed[k] = serialize_state(seen)
        return native

    def await_result(self) -> NativeResult | Abort:
        call = self._cur
        hint = call.state if call.sens is Sensitivity.NONE else None
        body = self._expect(MsgType.RESULT, call.checkpoint, hint)
        if isinstance(body, Abort):
            return body
        out = self.follower_on_result(body)
        self.clock.tick("resume", self.name, call.checkpoint)
        return out

    def on_exit(self, native: NativeResult) -> NativeResult | Abort:
        self._track_local(self._cur, native)
        return native

    def finish(self):
        """Say BYE and wait for the leader's BYE or a late ABORT."""
        if self.st.running:
            try:
                self.ch.send(WireMessage(MsgType.BYE))
            except PeerDisconnected:
                self._abort(Incident(Reason.ChannelLoss, None, self.name, detail="leader vanished before BYE"))
                return
        # in every case wait for the leader's last word so it sees ours
        while True:
            try:
                msg = self.ch.recv(None, timeout=self.config.timeout)
            except (PeerDisconnected, ProtocolError):
                if self.st.running:
                    self._abort(Incident(Reason.ChannelLoss, None, self.name, detail="no BYE from leader"))
                return
            if msg is None:
                if self.st.running:
                    self._abort(Incident(Reason.ChannelLoss, None, self.name, detail="timed out waiting for BYE"))
                return
            if msg.msg_type is MsgType.ABORT:
                if self.st.running:
                    self._leader_abort(msg)
                return
            if msg.msg_type is MsgType.BYE:
                if self.st.running:
                    self.st.status = Status.FINISHED
                return
            # stale VERDICT/RESULT traffic after our own abort: ignore
