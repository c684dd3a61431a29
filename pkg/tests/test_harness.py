import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import REPO
from nvxsim.errors import BadTrigger, ConfigError, UnrenderableIntent
from nvxsim.harness import (
    FaultSpec,
    Intent,
    LogicalProgram,
    SideEffectLedger,
    check_lockstep,
    check_single_effector,
    check_transparency,
    inject_fault,
    load_config,
    render_variant,
    run_scenario,
    scenario_from_dict,
)
from nvxsim.harness.corpus import CATEGORIES, benign_corpus, message_law_program
from nvxsim.harness.grid import fault_grid, symmetric
from nvxsim.platform import CanonicalSyscallId as S, Foldable, load_platform

X86, ARM7, ARM8 = (load_platform(n) for n in ("x86_64", "armv7_eabi", "armv8"))
CORPUS = {e.name: e for e in benign_corpus()}


def two(steps, **extra):
    doc = {"name": "t", "leader": "x86",
           "variant": [{"name": "x86", "platform": "x86_64"}, {"name": "arm", "platform": "armv7_eabi"}],
           "fs": {"files": {"/app/a.txt": "alpha\n"}, "dirs": ["/app/var"]},
           "step": steps}
    doc.update(extra)
    return scenario_from_dict(doc)


def events(prog, platform, **kw):
    gen = render_variant(LogicalProgram.from_list(prog), platform, **kw)
    out, step = [], next(gen, None)
    while step is not None:
        out.append(step.event)
        try:
            step = gen.send(None)
        except StopIteration:
            break
    return out


# rendering


def test_open_on_armv8_is_openat():
    ev = events([{"op": "open", "path": "/app/a.txt"}], ARM8)[0]
    assert ev.platform.syscall_table[ev.raw_number] is S.OPENAT


def test_open_override_on_x86():
    prog = [{"op": "open", "path": "/app/a.txt", "overrides": {"x86_64": {"use_open": True}}}]
    ev = events(prog, X86)[0]
    assert X86.syscall_table[ev.raw_number] is Foldable.OPEN
    ev = events([{"op": "open", "path": "/app/a.txt"}], X86)[0]
    assert X86.syscall_table[ev.raw_number] is S.OPENAT


def test_read_length_argument():
    ev = events([{"op": "read", "fd": 0, "count": 512}], ARM7)[0]
    assert ARM7.syscall_table[ev.raw_number] is S.READ and ev.args[2] == 512


def test_exit_appended():
    evs = events([{"op": "sched_yield"}], X86)
    assert X86.syscall_table[evs[-1].raw_number] is S.EXIT_GROUP


def test_unrenderable_intent():
    with pytest.raises(UnrenderableIntent):
        events([{"op": "accept", "fd": 0}], load_platform("i386"))


def test_intent_round_trip():
    i = Intent.from_dict({"op": "write", "fd": 1, "data": "x", "as": "w"})
    assert Intent.from_dict(i.to_dict()) == i


# configuration


@pytest.mark.parametrize("name", ["web.toml", "web_fault.toml", "files.toml", "daemon.toml"])
def test_shipped_scenarios_load(name):
    cfg = load_config(REPO / "scenarios" / name)
    assert len(cfg.variants) >= 2 and cfg.leader in {v.name for v in cfg.variants}


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_malformed_config(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("name = [\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_needs_variants():
    with pytest.raises(ConfigError):
        scenario_from_dict({"name": "x", "step": []})


@pytest.mark.parametrize("doc", [
    {"leader": "nobody"},
    {"transport": "carrier-pigeon"},
    {"variant": [{"name": "x86", "platform": "x86_64"}]},
    {"variant": [{"name": "a", "platform": "x86_64"}, {"name": "a", "platform": "armv7_eabi"}], "leader": "a"},
])
def test_invalid_config(doc):
    with pytest.raises(ConfigError):
        two([{"op": "sched_yield"}], **doc)


def test_bad_trigger():
    with pytest.raises(BadTrigger):
        inject_fault(two([{"op": "sched_yield"}]), FaultSpec("arm", 5, "extra"))


def test_fault_on_unknown_variant():
    with pytest.raises(ConfigError):
        inject_fault(two([{"op": "sched_yield"}]), FaultSpec("sparc", 0, "extra"))


def test_unknown_mutation():
    with pytest.raises(ConfigError):
        FaultSpec("arm", 0, "teleport")


def test_fault_touches_one_variant_only():
    cfg = two([{"op": "write", "fd": 1, "data": "AAAA"}])
    out = inject_fault(cfg, FaultSpec("arm", 0, "alter_buffer"))
    assert [len(v.faults) for v in out.variants] == [0, 1]
    assert cfg.variants[1].faults == []
    a = events([i.to_dict() for i in cfg.program.steps], ARM7, faults=out.variants[1].faults)[0]
    b = events([i.to_dict() for i in cfg.program.steps], ARM7)[0]
    assert a.captured_buffers[2] != b.captured_buffers[2]


# running scenarios


def test_benign_two_platform_run():
    r = run_scenario(load_config(REPO / "scenarios" / "web.toml"))
    assert r.status == "ok" and r.divergences == 0 and r.exit_code() == 0


def test_write_byte_fault():
    r = run_scenario(load_config(REPO / "scenarios" / "web_fault.toml"))
    assert r.status == "aborted" and r.reason == "BufferMismatch" and r.exit_code() == 2
    assert "divergence BufferMismatch" in r.to_text()


def test_getpid_twice():
    r = run_scenario(two([{"op": "getpid"}, {"op": "getpid"}]))
    first, second = r.leader.calls[:2]
    assert first["sent"] == {"RESULT": 1} and second["messages"] == 0
    f1, f2 = r.follower_calls()[:2]
    assert f1["received"] == {"RESULT": 1} and f2["messages"] == 0


def test_substitute_read_with_write():
    cfg = two([{"op": "open", "path": "/app/a.txt", "as": "f"}] + [{"op": "sched_yield"}] * 4 + [{"op": "read", "fd": "f", "count": 4}])
    r = run_scenario(inject_fault(cfg, FaultSpec("arm", 5, "substitute", to="WRITE")))
    assert r.status == "aborted" and r.reason == "SyscallIdMismatch"


@pytest.mark.parametrize("fault,reasons", [
    (FaultSpec("arm", 0, "alter_flag", flag="NOFOLLOW"), {"ValueMismatch"}),
    (FaultSpec("arm", 0, "alter_flag", bit=1 << 30), {"UnknownFlags"}),
])
def test_flag_flip(fault, reasons):
    r = run_scenario(inject_fault(two([{"op": "open", "path": "/app/a.txt"}]), fault))
    assert r.status == "aborted" and r.reason in reasons


def test_extra_syscall():
    r = run_scenario(inject_fault(two([{"op": "write", "fd": 1, "data": "x"}]), FaultSpec("arm", 0, "extra")))
    assert r.status == "aborted" and r.reason == "SyscallIdMismatch"


def test_symmetric_fault_goes_unnoticed():
    cfg = two([{"op": "write", "fd": 1, "data": "AAAA"}])
    r = run_scenario(symmetric(cfg, FaultSpec("x86", 0, "alter_buffer", xor=0x20)))
    assert r.status == "ok"
    # the corrupted payload reached the outside world unchallenged
    assert [e["digest"] for e in r.ledger] == [hashlib.sha256(b"aAAA").hexdigest()[:16]]


def test_pointer_patch_onto_gadget_is_caught():
    cfg = CORPUS["indirect-dispatch"].config
    r = run_scenario(inject_fault(cfg, FaultSpec("arm", 1, "pointer_patch", low_byte=0xA4)))
    assert r.status == "aborted" and r.reason == "SyscallIdMismatch"
    assert check_single_effector(r) == []
    assert not any(e["kind"] == "fs-mutation" for e in r.ledger)


def test_pointer_patch_to_junk_crashes_one_variant():
    cfg = CORPUS["indirect-dispatch"].config
    r = run_scenario(inject_fault(cfg, FaultSpec("arm", 1, "pointer_patch", low_byte=0x01)))
    assert r.status == "aborted"


def test_follower_exiting_early_is_caught():
    cfg = two([{"op": "write", "fd": 1, "data": "x"}], timeout=2.0)
    r = run_scenario(inject_fault(cfg, FaultSpec("arm", 0, "substitute", to="EXIT_GROUP")))
    assert r.status == "aborted" and r.reason == "SyscallIdMismatch"
    assert r.ledger == []


def test_lockstep_order_in_every_high_call():
    r = run_scenario(message_law_program())
    assert r.status == "ok" and check_lockstep(r) == []


def test_leader_only_effects_and_transparency():
    r = run_scenario(CORPUS["http-echo"].config)
    assert r.status == "ok"
    assert check_single_effector(r) == [] and check_transparency(r) == []
    assert r.ledger and {e["origin"] for e in r.ledger} == {"x86"}


def test_arm_leader():
    r = run_scenario(CORPUS["arm-leader-mixed"].config)
    assert r.status == "ok" and r.leader.name == "arm"


def test_pfa_changes_counts_not_outcomes():
    cfg = CORPUS["static-web-server"].config
    on, off = (run_scenario(cfg, pfa=p) for p in (True, False))
    assert on.status == off.status == "ok"
    assert on.total_messages() < off.total_messages()
    strip = lambda r: [(e["origin"], e["kind"], e["digest"]) for e in r.ledger]
    assert strip(on) == strip(off)


def test_ledger_is_append_only():
    led = SideEffectLedger()
    led.append("x86", "net-send", b"abc")
    snap = led.records
    led.append("x86", "file-write", b"d")
    assert led.records[:1] == snap and len(led) == 2
    with pytest.raises(ValueError):
        led.append("x86", "teleport")


def test_corpus_shape():
    assert len(CORPUS) >= 20
    for cat in CATEGORIES:
        assert any(cat in e.categories for e in CORPUS.values()), cat
    for e in CORPUS.values():
        assert {v.platform for v in e.config.variants} == {"x86_64", "armv7_eabi"}


def test_grid_covers_every_mutation():
    cases = fault_grid(CORPUS["http-echo"].config)
    assert {c.fault.mutation for c in cases} >= {"alter_buffer", "substitute", "alter_flag", "extra"}


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(sorted(CORPUS)), st.booleans(), st.booleans())
def test_corpus_runs_clean(name, pfa, acc):
    r = run_scenario(CORPUS[name].config, pfa=pfa, acc=acc)
    assert r.status == "ok", r.to_text()
    assert check_transparency(r) == [] and check_single_effector(r) == []


def test_substituted_high_call_is_bounded_by_next_high():
    from nvxsim.policy import Sensitivity

    cases = fault_grid(CORPUS["http-echo"].config, acc=True)
    sub = [c for c in cases if c.fault.mutation == "substitute" and c.fault.to == "READ" and c.op == "socket"]
    assert sub and all(c.sensitivity is Sensitivity.MODERATE and c.bound > c.fault.trigger for c in sub)
    last = [c for c in cases if c.fault.mutation == "substitute" and c.op == "exit"]
    assert all(c.bound == len(c.scenario.program_with_exit()) for c in last)
