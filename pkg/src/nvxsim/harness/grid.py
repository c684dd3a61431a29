"""Exhaustive single-variant fault grids over a scenario.

Each case pairs a faulted scenario with the divergence reason the monitors
must report and, for faults on calls that are only asynchronously checked,
the latest intent at which the faulted variant may still be running.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..platform import CanonicalSyscallId as S
from ..policy import Sensitivity, default_policy, effective_sensitivity
from .config import ScenarioConfig
from .faults import FaultSpec, inject_fault
from .program import OP_SYSCALL

# a bit no supported platform assigns in any flags table
UNKNOWN_BIT = 1 << 30

KNOWN_FLAG = {
    "open": "NOFOLLOW",
    "recvfrom": "MSG_PEEK",
    "sendto": "MSG_DONTWAIT",
    "mmap": "PROT_EXEC",
    "unlinkat": "AT_REMOVEDIR",
}


@dataclass
class FaultCase:
    base: str
    fault: FaultSpec
    scenario: ScenarioConfig
    expected: str
    op: str
    sensitivity: Sensitivity | None
    bound: int | None = None  # abort no later than this intent (Moderate faults under ACC)

    @property
    def label(self) -> str:
        f = self.fault
        what = f.flag or (hex(f.bit) if f.bit is not None else f.to or "")
        return f"{self.base}:{f.variant}:{f.trigger}:{self.op}:{f.mutation}{':' + what if what else ''}"


def intent_sensitivities(cfg: ScenarioConfig, acc: bool) -> list[Sensitivity | None]:
    """Per intent; None for intents that issue no syscall."""
    table = default_policy()
    return [
        effective_sensitivity(table[OP_SYSCALL[i.op]].sensitivity, acc) if i.op in OP_SYSCALL else None
        for i in cfg.program_with_exit()
    ]


def _has_payload(intent) -> bool:
    a = intent.args
    return bool(a.get("data") or a.get("hex") or a.get("data_from"))


def fault_grid(cfg: ScenarioConfig, *, acc: bool = True, targets: list[str] | None = None) -> list[FaultCase]:
    """One case per (variant, intent, applicable mutation), plus extra calls
    at the start, middle and end of the program."""
    intents = cfg.program_with_exit()
    sens = intent_sensitivities(cfg, acc)
    high = [i for i, s in enumerate(sens) if s is Sensitivity.HIGH]

    table = default_policy()

    def faulted_sensitivity(f: FaultSpec):
        # a substituted call is checked as the syscall that actually runs
        if f.mutation == "substitute":
            return effective_sensitivity(table[S[f.to]].sensitivity, acc)
        return sens[f.trigger]

    def bound(f: FaultSpec):
        if faulted_sensitivity(f) is not Sensitivity.MODERATE:
            return None
        later = f.trigger + 1 if f.mutation == "substitute" else f.trigger
        return next((h for h in high if h >= later), len(intents))

    cases = []
    for v in targets or [x.name for x in cfg.variants]:
        specs = []
        for i, intent in enumerate(intents):
            if intent.op in ("write", "sendto") and _has_payload(intent):
                specs.append((FaultSpec(v, i, "alter_buffer", xor=0x20), "BufferMismatch"))
            if sens[i] in (Sensitivity.HIGH, Sensitivity.MODERATE):
                to = "WRITE" if intent.op == "read" else "READ"
                specs.append((FaultSpec(v, i, "substitute", to=to), "SyscallIdMismatch"))
            if intent.op in KNOWN_FLAG:
                specs.append((FaultSpec(v, i, "alter_flag", flag=KNOWN_FLAG[intent.op]), "ValueMismatch"))
                specs.append((FaultSpec(v, i, "alter_flag", bit=UNKNOWN_BIT), "UnknownFlags"))
        for i in sorted({0, len(intents) // 2, len(intents) - 1}):
            specs.append((FaultSpec(v, i, "extra"), "SyscallIdMismatch"))
        for f, reason in specs:
            b = bound(f) if f.mutation != "extra" else None
            cases.append(FaultCase(cfg.name, f, inject_fault(cfg, f), reason, intents[f.trigger].op, faulted_sensitivity(f), b))
    return cases


def symmetric(cfg: ScenarioConfig, f: FaultSpec) -> ScenarioConfig:
    """The same fault applied to every variant: by construction undetectable."""
    from dataclasses import replace

    out = cfg
    for v in cfg.variants:
        out = inject_fault(out, replace(f, variant=v.name))
    return out
