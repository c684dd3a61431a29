import threading

import pytest

import conformance
from nvxsim.errors import PeerDisconnected, ProtocolError, VersionMismatch
from nvxsim.rccom import MsgType, WireMessage, handshake, listen, memory_pair, open_channel, unique_memory_name
from nvxsim.rccom.channel import decode_hello, encode_hello


@pytest.fixture(params=sorted(conformance.PAIRS))
def pair(request):
    return conformance.PAIRS[request.param]


@pytest.mark.parametrize("check", conformance.CHECKS, ids=lambda c: c.__name__[6:])
def test_conformance(pair, check):
    check(pair)


def test_version_mismatch_at_hello():
    a, b = memory_pair()
    t = threading.Thread(target=lambda: pytest.raises(VersionMismatch, handshake, b, "follower", b"", version=2))
    t.start()
    with pytest.raises(VersionMismatch):
        handshake(a, "leader", b"")
    t.join()


def test_both_leaders_rejected():
    a, b = memory_pair()
    t = threading.Thread(target=lambda: pytest.raises(ProtocolError, handshake, b, "leader", b""))
    t.start()
    with pytest.raises(ProtocolError):
        handshake(a, "leader", b"")
    t.join()


def test_traffic_before_hello_rejected():
    a, _ = memory_pair()
    with pytest.raises(ProtocolError):
        a.send(WireMessage(MsgType.STATE))


def test_hello_payload_round_trip():
    info = decode_hello(encode_hello(1, "follower", b"\x01" * 32))
    assert (info.version, info.role, info.platform_digest) == (1, "follower", b"\x01" * 32)


@pytest.mark.parametrize("scheme", ["mem", "tcp"])
def test_open_channel_endpoints(scheme):
    ep = f"mem://{unique_memory_name()}" if scheme == "mem" else "tcp://127.0.0.1:0"
    lst = listen(ep)
    out = {}
    t = threading.Thread(target=lambda: out.setdefault("f", open_channel(lst.endpoint, "follower", b"F" * 32)))
    t.start()
    leader = open_channel(lst.endpoint, "leader", b"L" * 32, listener=lst)
    t.join()
    lst.close()
    assert leader.peer.role == "follower" and leader.peer.platform_digest == b"F" * 32
    assert out["f"].peer.role == "leader"
    leader.close()
    with pytest.raises(PeerDisconnected):
        out["f"].recv(timeout=5)


def test_connect_to_nothing():
    with pytest.raises(PeerDisconnected):
        open_channel(f"mem://{unique_memory_name()}", "follower", b"", timeout=0.05)


@pytest.mark.parametrize("ep", ["enet://host:1", "rdma://host:1"])
def test_unimplemented_transports(ep):
    with pytest.raises(NotImplementedError):
        listen(ep)


def test_bad_role():
    with pytest.raises(ValueError):
        open_channel("mem://x", "observer", b"")
