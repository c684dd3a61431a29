"""Monitor state machines driven one call at a time; the test plays the peer."""

import struct
import threading

import pytest

from conformance import mem_pair
from nvxsim.canonical import BufferVal, CanonicalSyscallState, Direction, ErrorVal, IntVal, Reason, deserialize_state, serialize_state
from nvxsim.harness import Intent, Renderer
from nvxsim.monitor import (
    Abort,
    AwaitResult,
    FollowerMonitor,
    LeaderMonitor,
    MonitorConfig,
    Proceed,
    ProceedAsLocal,
    Skip,
    Status,
    parse_abort,
)
from nvxsim.canonical import NativeResult
from nvxsim.platform import CanonicalSyscallId as S, load_platform
from nvxsim.rccom import ChannelClass, MsgType, WireMessage
from nvxsim.vfs import FsContext, StaticFileManifest

X86, ARM = load_platform("x86_64"), load_platform("armv7_eabi")
CK = struct.Struct("<Q")
CFG = MonitorConfig(timeout=2.0, stall=0.2)


def fs():
    return FsContext("/app", "/app", {"/app/etc/app.conf": bytearray(b"listen=8080\n")}, {"/app/var"})


def follower(platform=ARM, config=CFG):
    mine, peer = mem_pair()  # mem_pair gives (leader end, follower end)
    f = FollowerMonitor("f", platform, fs(), StaticFileManifest.capture(fs()), peer, config)
    return f, mine


def leader(n=1, platform=X86, config=CFG):
    ends, peers = {}, []
    for i in range(n):
        lead_end, fol_end = mem_pair()
        ends[f"f{i}"] = lead_end
        peers.append(fol_end)
    m = LeaderMonitor("l", platform, fs(), StaticFileManifest.capture(fs()), ends, config)
    return m, peers


def event(platform, op, **args):
    return Renderer(platform).render(Intent(op, args))


def sent_total(rec):
    return sum(rec.sent.values()), sum(rec.received.values())


def exit_state(sid, *vals):
    return CanonicalSyscallState(sid, tuple(vals), Direction.EXIT)


def result_msg(k, state):
    return WireMessage(MsgType.RESULT, CK.pack(k) + serialize_state(state))


# follower_on_entry


def test_sched_yield_sends_nothing():
    f, peer = follower()
    assert isinstance(f.on_entry(event(ARM, "sched_yield")), Proceed)
    assert sent_total(f.calls[-1]) == (0, 0)
    assert peer.pending(ChannelClass.SYNC) == 0


def test_high_call_one_state_one_verdict():
    f, peer = follower()
    peer.send(WireMessage(MsgType.VERDICT, CK.pack(1) + b"\0"))
    action = f.on_entry(event(ARM, "open", path="/app/etc/app.conf"))
    assert isinstance(action, (Proceed, ProceedAsLocal))
    assert f.calls[-1].sent[MsgType.STATE] == 1 and f.calls[-1].received[MsgType.VERDICT] == 1
    msg = peer.recv(ChannelClass.SYNC, timeout=1)
    assert msg.msg_type is MsgType.STATE and CK.unpack_from(msg.payload)[0] == 1
    assert deserialize_state(msg.payload[8:]).id is S.OPENAT


def test_moderate_read_under_acc_does_not_wait():
    f, peer = follower()
    peer.send(WireMessage(MsgType.VERDICT, CK.pack(1) + b"\0"))
    f.complete(f.on_entry(event(ARM, "open", path="/app/etc/app.conf", **{})), lambda: NativeResult(3))
    action = f.on_entry(event(ARM, "read", fd=3, count=8))
    assert isinstance(action, (Proceed, ProceedAsLocal))
    assert sent_total(f.calls[-1]) == (1, 0)


def test_moderate_read_without_acc_is_lockstep():
    f, peer = follower(config=MonitorConfig(timeout=2.0, acc=False))
    peer.send(WireMessage(MsgType.VERDICT, CK.pack(1) + b"\0"))
    peer.send(result_msg(1, exit_state(S.READ, IntVal(2), BufferVal(b"hi"))))
    action = f.on_entry(event(ARM, "read", fd=0, count=8))
    assert isinstance(action, AwaitResult)
    assert f.calls[-1].received[MsgType.VERDICT] == 1


def test_divergent_verdict_aborts():
    f, peer = follower()
    peer.send(WireMessage(MsgType.VERDICT, CK.pack(1) + bytes([Reason.ValueMismatch])))
    action = f.on_entry(event(ARM, "write", fd=1, data="x"))
    assert isinstance(action, Abort) and action.reason is Reason.ValueMismatch
    assert f.status is Status.ABORTED


def test_warm_cache_skips_with_no_messages():
    f, peer = follower()
    peer.send(result_msg(1, exit_state(S.GETPID, IntVal(4242))))
    first = f.complete(f.on_entry(event(ARM, "getpid")), lambda: None)
    action = f.on_entry(event(ARM, "getpid"))
    assert isinstance(action, Skip)
    assert f.complete(action, lambda: None).raw_result == first.raw_result == 4242
    assert sent_total(f.calls[-1]) == (0, 0)


# follower_on_result


def test_result_buffer_is_injected_verbatim():
    f, peer = follower()
    peer.send(result_msg(1, exit_state(S.READ, IntVal(10), BufferVal(b"abcdefghij"))))
    res = f.complete(f.on_entry(event(ARM, "read", fd=0, count=10)), lambda: None)
    assert res.raw_result == 10 and res.buffers[2] == b"abcdefghij"


def test_result_for_unknown_checkpoint():
    f, peer = follower()
    peer.send(result_msg(99, exit_state(S.GETUID, IntVal(1000))))
    res = f.complete(f.on_entry(event(ARM, "getuid")), lambda: None)
    assert isinstance(res, Abort) and res.reason is Reason.ProtocolError


@pytest.mark.parametrize("platform", [X86, ARM])
def test_error_result_uses_local_errno(platform):
    f, peer = follower(platform)
    peer.send(WireMessage(MsgType.VERDICT, CK.pack(1) + b"\0"))
    peer.send(result_msg(1, exit_state(S.OPENAT, ErrorVal("ENOENT"))))
    res = f.complete(f.on_entry(event(platform, "open", path="/app/missing")), lambda: None)
    assert res.raw_result == -platform.errno["ENOENT"] & platform.word_mask


def test_leader_vanishing_is_channel_loss():
    f, peer = follower()
    peer.close()
    action = f.on_entry(event(ARM, "write", fd=1, data="x"))
    assert isinstance(action, Abort) and action.reason is Reason.ChannelLoss


# poll_abort


def test_pending_abort_is_taken_at_the_boundary():
    f, peer = follower()
    assert f.poll_abort() is None
    peer.send(WireMessage.abort(struct.pack("<BQ", Reason.BufferMismatch, 4)))
    a = f.poll_abort()
    assert isinstance(a, Abort) and a.reason is Reason.BufferMismatch
    assert f.status is Status.ABORTED and f.incident.checkpoint == 4


def test_abort_racing_a_moderate_call():
    f, peer = follower()
    assert isinstance(f.on_entry(event(ARM, "fstat", fd=0)), AwaitResult)  # Moderate, ACC
    # the leader finds the divergence only after the follower moved on
    peer.send(WireMessage.abort(struct.pack("<BQ", Reason.ValueMismatch, 1)))
    action = f.on_entry(event(ARM, "sched_yield"))
    assert isinstance(action, Abort) and action.reason is Reason.ValueMismatch
    assert len(f.calls) == 1  # never crossed into the next call


# leader_on_entry / leader_on_exit


def state_msg(k, platform, op, **args):
    from nvxsim.canonical import FdTranslation, canonicalize

    s = canonicalize(event(platform, op, **args), fs(), FdTranslation())
    return WireMessage(MsgType.STATE, CK.pack(k) + serialize_state(s))


def test_two_followers_match():
    m, peers = leader(2)
    for p in peers:
        p.send(state_msg(1, ARM, "write", fd=1, data="hello"))
    action = m.on_entry(event(X86, "write", fd=1, data="hello"))
    assert isinstance(action, Proceed)
    m.on_exit(NativeResult(5))
    for p in peers:
        first = p.recv(ChannelClass.SYNC, timeout=1)
        assert first.msg_type is MsgType.VERDICT and first.payload == CK.pack(1) + b"\0"
        assert p.recv(ChannelClass.SYNC, timeout=1).msg_type is MsgType.RESULT
    assert m.calls[-1].sent[MsgType.VERDICT] == 2


def test_buffer_mismatch_broadcasts_abort():
    m, peers = leader(2)
    peers[0].send(state_msg(1, ARM, "write", fd=1, data="AAAA"))
    peers[1].send(state_msg(1, ARM, "write", fd=1, data="AABA"))
    action = m.on_entry(event(X86, "write", fd=1, data="AAAA"))
    assert isinstance(action, Abort) and action.reason is Reason.BufferMismatch
    assert m.status is Status.ABORTED
    assert (m.incident.peer, m.incident.arg, m.incident.offset) == ("f1", 2, 2)
    for p in peers:
        reason, k, _ = parse_abort(p.recv(ChannelClass.ERROR, timeout=1).payload)
        assert (reason, k) == (Reason.BufferMismatch, 1)


def test_acc_divergence_found_when_state_arrives():
    m, peers = leader(1)
    assert isinstance(m.on_entry(event(X86, "fstat", fd=0)), Proceed)  # runs ahead
    assert m.pending_async == [1]
    m.on_exit(NativeResult(0, {2: bytes(144)}))
    peers[0].send(state_msg(1, ARM, "fstat", fd=2))
    a = m.poll_abort()
    assert isinstance(a, Abort) and a.reason is Reason.ValueMismatch
    assert peers[0].recv(ChannelClass.ERROR, timeout=1).msg_type is MsgType.ABORT


def test_result_carries_received_bytes():
    m, peers = leader(1)
    m.on_entry(event(X86, "recvfrom", fd=0, count=64))
    payload = bytes(range(64))
    m.on_exit(NativeResult(64, {2: payload}))
    msg = peers[0].recv(ChannelClass.SYNC, timeout=1)
    got = deserialize_state(msg.payload[8:])
    assert msg.msg_type is MsgType.RESULT and got.norm_args == (IntVal(64), BufferVal(payload))


def test_none_sensitivity_local_call_is_silent_on_leader():
    m, peers = leader(1)
    assert isinstance(m.on_entry(event(X86, "sched_yield")), Proceed)
    m.on_exit(NativeResult(0))
    assert peers[0].pending(ChannelClass.SYNC) == 0


def test_follower_hang_up_is_channel_loss():
    m, peers = leader(1)
    peers[0].close()
    a = m.on_entry(event(X86, "write", fd=1, data="x"))
    assert isinstance(a, Abort) and a.reason is Reason.ChannelLoss


def test_full_exchange_over_threads():
    m, peers = leader(1)
    f = FollowerMonitor("f0", ARM, fs(), StaticFileManifest.capture(fs()), peers[0], CFG)
    prog = [("getpid", {}), ("write", {"fd": 1, "data": "hi"}), ("getpid", {}), ("sched_yield", {})]
    seen = []

    def run_follower():
        for op, a in prog:
            seen.append(f.complete(f.on_entry(event(ARM, op, **a)), lambda: NativeResult(0)))
        f.finish()

    t = threading.Thread(target=run_follower)
    t.start()
    for op, a in prog:
        m.complete(m.on_entry(event(X86, op, **a)), lambda op=op: NativeResult(77 if op == "getpid" else 2))
    m.finish()
    t.join(5)
    assert m.status is f.status is Status.FINISHED
    assert [r.raw_result for r in seen] == [77, 2, 77, 0]
