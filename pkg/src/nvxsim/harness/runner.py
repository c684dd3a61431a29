"""Boot a leader and its followers, run the program everywhere, report.

By default every variant+monitor pair is a thread of this process. With
:func:`run_daemon` a single pair runs per process over TCP.
"""

from __future__ import annotations

import json
import threading
import traceback
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from .. import rccom
from ..monitor import Abort, FollowerMonitor, LeaderMonitor, LogicalClock, MonitorConfig, Status
from ..rccom import Channel
from ..vfs import StaticFileManifest
from .config import ScenarioConfig, VariantConfig
from .kernel import SimKernel
from .ledger import SideEffectLedger
from .program import render_variant


@dataclass
class VariantOutcome:
    name: str
    platform: str
    role: str
    status: str = "error"
    aborted_at_intent: int | None = None
    exit_code: int | None = None
    incident: dict | None = None
    calls: list = field(default_factory=list)
    sent: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ScenarioReport:
    scenario: str
    status: str  # ok | aborted | error
    transport: str
    pfa: bool
    acc: bool
    incident: dict | None = None
    variants: dict[str, VariantOutcome] = field(default_factory=dict)
    messages: dict = field(default_factory=dict)
    ledger: list = field(default_factory=list)
    leader_results: dict = field(default_factory=dict)  # checkpoint -> hex
    follower_observed: dict = field(default_factory=dict)  # follower -> checkpoint -> hex
    trace: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def reason(self) -> str | None:
        return self.incident["reason"] if self.incident else None

    @property
    def divergences(self) -> int:
        return 1 if self.status == "aborted" else 0

    @property
    def leader(self) -> VariantOutcome:
        return next(v for v in self.variants.values() if v.role == "leader")

    def follower_calls(self, name: str | None = None) -> list[dict]:
        fs = [v for v in self.variants.values() if v.role == "follower"]
        v = fs[0] if name is None else self.variants[name]
        return v.calls

    def total_messages(self) -> int:
        return self.messages.get("total", 0)

    def exit_code(self) -> int:
        return {"ok": 0, "aborted": 2}.get(self.status, 1)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["variants"] = {k: v.to_dict() for k, v in self.variants.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)

    def to_text(self) -> str:
        lines = [f"scenario {self.scenario}: {self.status}"]
        lines.append(f"  transport={self.transport} pfa={'on' if self.pfa else 'off'} acc={'on' if self.acc else 'off'}")
        if self.incident:
            i = self.incident
            where = f", arg {i['arg']}" if i.get("arg") else ""
            where += f" offset {i['offset']}" if i.get("offset") is not None and i.get("arg") else ""
            lines.append(f"  divergence {i['reason']} at checkpoint {i['checkpoint']}{where} (detected by {i['detected_by']})")
            if i.get("leader_state"):
                lines.append(f"    leader   {i['leader_state']}")
            if i.get("follower_state"):
                lines.append(f"    follower {i['follower_state']}")
            if i.get("detail"):
                lines.append(f"    {i['detail']}")
        by_type = self.messages.get("by_type", {})
        lines.append("  messages " + " ".join(f"{k}={v}" for k, v in sorted(by_type.items())) + f" total={self.total_messages()}")
        for v in self.variants.values():
            extra = f" aborted_at={v.aborted_at_intent}" if v.aborted_at_intent is not None else ""
            lines.append(f"  {v.role:8} {v.name} ({v.platform}): {v.status}{extra}")
        lines.append(f"  ledger {len(self.ledger)} effects from {sorted({e['origin'] for e in self.ledger})}")
        for e in self.errors:
            lines.append(f"  error: {e.splitlines()[-1] if e else e}")
        return "\n".join(lines)


# invariants over a finished report


def check_single_effector(report: ScenarioReport) -> list[str]:
    leader = report.leader.name
    return [f"effect {e['kind']} ({e['detail']}) from {e['origin']}" for e in report.ledger if e["origin"] != leader]


def check_transparency(report: ScenarioReport) -> list[str]:
    problems = []
    for f, seen in report.follower_observed.items():
        for ck, blob in seen.items():
            mine = report.leader_results.get(ck)
            if mine != blob:
                problems.append(f"{f} checkpoint {ck}: observed {blob} but leader produced {mine}")
    return problems


def check_lockstep(report: ScenarioReport) -> list[str]:
    """Leader effect of every High call lies between the followers' STATE
    sends and their resumes."""
    ts: dict[tuple[str, str, int], int] = {}
    for t, kind, who, ck in report.trace:
        if ck is not None:
            ts.setdefault((kind, who, ck), t)
    leader = report.leader
    problems = []
    for call in leader.calls:
        if call["sensitivity"] != "High" or call["checkpoint"] is None:
            continue
        k = call["checkpoint"]
        effect = ts.get(("effect", leader.name, k))
        if effect is None:
            continue
        for v in report.variants.values():
            if v.role != "follower":
                continue
            send, resume = ts.get(("state_send", v.name, k)), ts.get(("resume", v.name, k))
            if send is None or resume is None or not send < effect < resume:
                problems.append(f"checkpoint {k}: send={send} effect={effect} resume={resume} for {v.name}")
    return problems


# actors


class _Actor:
    def __init__(self, cfg: ScenarioConfig, v: VariantConfig, role: str, ledger, clock, manifest):
        self.cfg, self.v, self.role = cfg, v, role
        self.platform = v.load_platform(cfg.base_dir)
        self.fs = cfg.make_fs()
        self.kernel = SimKernel(self.platform, self.fs, v.name, ledger, cfg.make_world(), cfg.profile_for(v))
        self.clock = clock
        self.manifest = manifest if manifest is not None else StaticFileManifest.capture(self.fs)
        self.outcome = VariantOutcome(v.name, self.platform.name, role)
        self.monitor: LeaderMonitor | FollowerMonitor | None = None
        self.channels: list[Channel] = []

    def mconfig(self) -> MonitorConfig:
        return MonitorConfig(pfa=self.cfg.pfa, acc=self.cfg.acc, timeout=self.cfg.timeout)

    def build(self, channels: dict[str, Channel] | Channel):
        if self.role == "leader":
            self.channels = list(channels.values())
            self.monitor = LeaderMonitor(
                self.v.name, self.platform, self.fs, self.manifest, channels, self.mconfig(), clock=self.clock
            )
        else:
            self.channels = [channels]
            self.monitor = FollowerMonitor(
                self.v.name, self.platform, self.fs, self.manifest, channels, self.mconfig(), clock=self.clock,
                fd_alloc=self.kernel.reserve_fd, fd_free=self.kernel.free_fd,
            )

    def run(self):
        mon, out = self.monitor, self.outcome
        try:
            salt = [x.name for x in self.cfg.variants].index(self.v.name)
            gen = render_variant(
                self.cfg.program, self.platform, defaults=self.v.render, faults=self.v.faults,
                code_pointers=self.v.code_pointers, gadget_effects=self.v.gadget_effects, salt=salt,
            )
            step = next(gen, None)
            while step is not None:
                before = len(mon.calls)
                action = mon.on_entry(step.event)
                if len(mon.calls) > before:
                    mon.calls[-1].intent = step.ordinal
                    mon.calls[-1].injected = step.injected
                if isinstance(action, Abort):
                    out.aborted_at_intent = step.ordinal
                    break
                ev = step.event
                res = mon.complete(action, lambda: self.kernel.execute(ev))
                if isinstance(res, Abort):
                    out.aborted_at_intent = step.ordinal
                    break
                try:
                    step = gen.send(res)
                except StopIteration:
                    step = None
            mon.finish()
            if mon.status is Status.ABORTED and out.aborted_at_intent is None:
                out.aborted_at_intent = len(self.cfg.program_with_exit())
        except Exception:
            out.error = traceback.format_exc()
        finally:
            for ch in self.channels:
                ch.shutdown_send()
            self._summarize()

    def _summarize(self):
        mon, out = self.monitor, self.outcome
        if mon is None:
            return
        if out.error:
            out.status = "error"
        else:
            out.status = {Status.ABORTED: "aborted", Status.FINISHED: "ok"}.get(mon.status, "error")
        out.exit_code = self.kernel.exit_code
        out.incident = mon.incident.to_dict() if mon.incident else None
        out.calls = [c.to_dict() for c in mon.calls]
        sent = Counter()
        for ch in self.channels:
            sent.update({t.name: n for t, n in ch.sent.items()})
        out.sent = dict(sent)


def _thread(actor: _Actor, setup) -> threading.Thread:
    def body():
        try:
            setup()
        except Exception:
            actor.outcome.error = traceback.format_exc()
            return
        actor.run()

    return threading.Thread(target=body, name=f"variant-{actor.v.name}", daemon=True)


def _assemble(cfg: ScenarioConfig, actors: list[_Actor], ledger, clock) -> ScenarioReport:
    outcomes = {a.v.name: a.outcome for a in actors}
    errors = [a.outcome.error for a in actors if a.outcome.error]
    statuses = {o.status for o in outcomes.values()}
    if errors or "error" in statuses:
        status = "error"
    elif "aborted" in statuses:
        status = "aborted"
    else:
        status = "ok"
    leader = next(a for a in actors if a.role == "leader")
    incident = leader.outcome.incident
    if incident is None:
        incident = next((a.outcome.incident for a in actors if a.outcome.incident), None)
    by_type: Counter = Counter()
    for a in actors:
        by_type.update(a.outcome.sent)
    by_class = {"error": by_type.get("ABORT", 0), "sync": sum(n for t, n in by_type.items() if t != "ABORT")}
    lm = leader.monitor
    return ScenarioReport(
        scenario=cfg.name,
        status=status,
        transport=cfg.transport,
        pfa=cfg.pfa,
        acc=cfg.acc,
        incident=incident,
        variants=outcomes,
        messages={"by_type": dict(by_type), "by_class": by_class, "total": sum(by_type.values())},
        ledger=[e.to_dict() for e in ledger.records],
        leader_results={k: v.hex() for k, v in (lm.results.items() if lm else [])},
        follower_observed={
            a.v.name: {k: v.hex() for k, v in a.monitor.observed.items()}
            for a in actors if a.role == "follower" and a.monitor is not None
        },
        trace=list(clock.trace),
        errors=errors,
    )


def run_scenario(cfg: ScenarioConfig, *, transport: str | None = None, pfa: bool | None = None, acc: bool | None = None) -> ScenarioReport:
    """Run all variants of ``cfg`` as threads of this process."""
    cfg = cfg.with_flags(transport=transport, pfa=pfa, acc=acc)
    ledger, clock = SideEffectLedger(), LogicalClock()
    trees = [cfg.make_fs() for _ in cfg.variants]
    manifest = StaticFileManifest.agreed(trees)
    actors = [_Actor(cfg, v, "leader" if v.name == cfg.leader else "follower", ledger, clock, manifest) for v in cfg.variants]
    leader = next(a for a in actors if a.role == "leader")
    followers = [a for a in actors if a.role == "follower"]

    listeners = {}
    for f in followers:
        if cfg.transport == "mem":
            listeners[f.v.name] = rccom.listen(f"mem://{rccom.unique_memory_name(f.v.name)}")
        else:
            listeners[f.v.name] = rccom.listen("tcp://127.0.0.1:0")
    endpoints = {n: l.endpoint for n, l in listeners.items()}
    digest = lambda a: bytes.fromhex(a.platform.digest)[:32]  # noqa: E731

    def leader_setup():
        chans = {}
        for f in followers:
            chans[f.v.name] = rccom.open_channel(
                endpoints[f.v.name], "leader", digest(leader), listener=listeners[f.v.name], timeout=cfg.timeout
            )
        leader.build(chans)

    def follower_setup(f: _Actor):
        return lambda: f.build(rccom.open_channel(endpoints[f.v.name], "follower", digest(f), timeout=cfg.timeout))

    threads = [_thread(leader, leader_setup)] + [_thread(f, follower_setup(f)) for f in followers]
    for t in threads:
        t.start()
    for t in threads:
        t.join(cfg.timeout * 4 + 30)
    for lst in listeners.values():
        lst.close()
    for a in actors:
        for ch in a.channels:
            ch.close()
    for a, t in zip([leader] + followers, threads):
        if t.is_alive():
            a.outcome.error = a.outcome.error or "actor did not finish"
            a.outcome.status = "error"
    return _assemble(cfg, actors, ledger, clock)


def run_daemon(cfg: ScenarioConfig, variant: str, *, pfa: bool | None = None, acc: bool | None = None) -> ScenarioReport:
    """Run one variant+monitor of ``cfg`` in this process over TCP.

    The leader listens on every follower's ``endpoint``; each follower
    connects to its own. Each process captures its own static manifest.
    """
    cfg = cfg.with_flags(transport="tcp", pfa=pfa, acc=acc)
    ledger, clock = SideEffectLedger(), LogicalClock()
    names = [v.name for v in cfg.variants]
    if variant not in names:
        from ..errors import ConfigError

        raise ConfigError(f"no variant {variant!r}")
    v = cfg.variants[names.index(variant)]
    role = "leader" if v.name == cfg.leader else "follower"
    actor = _Actor(cfg, v, role, ledger, clock, None)
    digest = bytes.fromhex(actor.platform.digest)[:32]
    try:
        if role == "leader":
            chans = {}
            for f in cfg.followers:
                if not f.endpoint:
                    from ..errors import ConfigError

                    raise ConfigError(f"follower {f.name} needs an endpoint in daemon mode")
                chans[f.name] = rccom.open_channel(f.endpoint, "leader", digest, timeout=cfg.timeout)
            actor.build(chans)
        else:
            actor.build(rccom.open_channel(v.endpoint, "follower", digest, timeout=cfg.timeout))
        actor.run()
    except Exception:
        actor.outcome.error = traceback.format_exc()
        actor.outcome.status = "error"
    finally:
        for ch in actor.channels:
            ch.close()
    return _assemble_single(cfg, actor, ledger, clock)


def _assemble_single(cfg, actor: _Actor, ledger, clock) -> ScenarioReport:
    rep = _assemble(cfg, [actor], ledger, clock) if actor.role == "leader" else None
    if rep is None:
        o = actor.outcome
        by_type = Counter(o.sent)
        rep = ScenarioReport(
            cfg.name, o.status if not o.error else "error", "tcp", cfg.pfa, cfg.acc, o.incident, {o.name: o},
            {"by_type": dict(by_type), "total": sum(by_type.values())},
            [e.to_dict() for e in ledger.records], {},
            {o.name: {k: b.hex() for k, b in actor.monitor.observed.items()}} if actor.monitor else {},
            list(clock.trace), [o.error] if o.error else [],
        )
    return rep


__all__ = [
    "ScenarioReport", "VariantOutcome", "run_scenario", "run_daemon",
    "check_single_effector", "check_transparency", "check_lockstep",
]
