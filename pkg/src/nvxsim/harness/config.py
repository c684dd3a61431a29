"""Scenario configuration (TOML).

A scenario lists the variants (one is the leader), the shared logical
program, the application file tree, scripted network peers and the
optimization flags. See ``scenarios/`` for examples.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from ..platform import PlatformSpec, load_platform
from ..vfs import FsContext
from .faults import FaultSpec
from .kernel import MachineProfile, NetworkWorld
from .program import Intent, LogicalProgram

TRANSPORTS = ("mem", "tcp")


@dataclass
class VariantConfig:
    name: str
    platform: str
    endpoint: str | None = None  # followers: where the leader listens for this follower
    render: dict = field(default_factory=dict)
    machine: dict = field(default_factory=dict)
    code_pointers: dict = field(default_factory=dict)
    gadget_effects: dict = field(default_factory=dict)  # address -> list of step dicts
    faults: list = field(default_factory=list)

    def load_platform(self, base: Path | None = None) -> PlatformSpec:
        p = Path(self.platform)
        if base is not None and not p.is_absolute() and (base / p).exists():
            p = base / p
        try:
            return load_platform(p if p.suffix == ".toml" else self.platform)
        except FileNotFoundError:
            raise ConfigError(f"variant {self.name}: no platform {self.platform!r}") from None


@dataclass
class ScenarioConfig:
    name: str
    variants: list[VariantConfig]
    program: LogicalProgram
    leader: str
    files: dict = field(default_factory=dict)  # path -> bytes
    dirs: list = field(default_factory=list)
    root: str = "/app"
    cwd: str = "/app"
    connections: list = field(default_factory=list)  # (port, [bytes])
    transport: str = "mem"
    pfa: bool = True
    acc: bool = True
    timeout: float = 10.0
    placement: str = ""  # free text, e.g. which host is slower; no protocol effect
    base_dir: Path | None = None

    def __post_init__(self):
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError("variant names must be unique")
        if len(self.variants) < 2:
            raise ConfigError("a scenario needs a leader and at least one follower")
        if names.count(self.leader) != 1:
            raise ConfigError(f"leader {self.leader!r} must name exactly one variant")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}")

    @property
    def leader_variant(self) -> VariantConfig:
        return next(v for v in self.variants if v.name == self.leader)

    @property
    def followers(self) -> list[VariantConfig]:
        return [v for v in self.variants if v.name != self.leader]

    def program_with_exit(self) -> list[Intent]:
        steps = list(self.program.steps)
        if not steps or steps[-1].op != "exit":
            steps.append(Intent("exit", {"code": 0}))
        return steps

    def make_fs(self) -> FsContext:
        return FsContext(self.root, self.cwd, {p: bytearray(c) for p, c in self.files.items()}, set(self.dirs))

    def make_world(self) -> NetworkWorld:
        return NetworkWorld([(port, list(chunks)) for port, chunks in self.connections])

    def profile_for(self, v: VariantConfig) -> MachineProfile:
        i = [x.name for x in self.variants].index(v.name)
        defaults: dict[str, Any] = {
            "pid": 4242 + 1111 * i,
            "uid": 1000 + i,
            "clock_base": 1_700_000_000 + 37 * i,
            "hostname": v.name,
            "fd_base": 3 + 2 * i,
        }
        defaults.update(v.machine)
        try:
            return MachineProfile(**defaults)
        except TypeError as e:
            raise ConfigError(f"variant {v.name} machine: {e}") from None

    def with_flags(self, *, transport=None, pfa=None, acc=None) -> ScenarioConfig:
        import copy

        out = copy.deepcopy(self)
        if transport is not None:
            if transport not in TRANSPORTS:
                raise ConfigError(f"transport must be one of {TRANSPORTS}")
            out.transport = transport
        if pfa is not None:
            out.pfa = pfa
        if acc is not None:
            out.acc = acc
        return out


def _bytes(v) -> bytes:
    if isinstance(v, Mapping):
        if "hex" in v:
            return bytes.fromhex(v["hex"])
        return str(v.get("text", "")).encode()
    return v.encode() if isinstance(v, str) else bytes(v)


def _variant(d: Mapping) -> VariantConfig:
    d = dict(d)
    try:
        gadgets = {int(g["addr"]): list(g["steps"]) for g in d.pop("gadget", [])}
        faults = [FaultSpec.from_dict(f) for f in d.pop("fault", [])]
        return VariantConfig(gadget_effects=gadgets, faults=faults, **d)
    except (TypeError, KeyError) as e:
        raise ConfigError(f"variant: {e}") from None


def scenario_from_dict(doc: Mapping, base_dir: Path | None = None) -> ScenarioConfig:
    doc = dict(doc)
    try:
        if "program" in doc:
            src = Path(doc["program"])
            if base_dir is not None and not src.is_absolute():
                src = base_dir / src
            with open(src, "rb") as f:
                steps = tomllib.load(f).get("step", [])
        else:
            steps = doc.get("step", [])
        program = LogicalProgram.from_list(steps, doc.get("name", "program"))
        variants = [_variant(v) for v in doc["variant"]]
        fs = doc.get("fs", {})
        files = {p: _bytes(c) for p, c in fs.get("files", {}).items()}
        world = doc.get("world", {})
        conns = [(int(c["port"]), [_bytes(x) for x in c.get("inbound", [])]) for c in world.get("connection", [])]
        cfg = ScenarioConfig(
            name=doc.get("name", "scenario"),
            variants=variants,
            program=program,
            leader=doc.get("leader", variants[0].name),
            files=files,
            dirs=list(fs.get("dirs", [])),
            root=fs.get("root", "/app"),
            cwd=fs.get("cwd", fs.get("root", "/app")),
            connections=conns,
            transport=doc.get("transport", "mem"),
            pfa=bool(doc.get("pfa", True)),
            acc=bool(doc.get("acc", True)),
            timeout=float(doc.get("timeout", 10.0)),
            placement=doc.get("placement", ""),
            base_dir=base_dir,
        )
    except KeyError as e:
        raise ConfigError(f"scenario lacks {e}") from None
    from .faults import inject_fault

    for f in doc.get("fault", []):
        cfg = inject_fault(cfg, FaultSpec.from_dict(f))
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"no config file {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return scenario_from_dict(doc, path.parent)
