"""Cross-ISA gadget survivability and struct layout diversity.

The question: if an attacker corrupts the same code pointer in two variants
built for different ISAs, by the same amount, how many useful gadgets land
on something useful in both? Two corruption strategies are modelled.

offset   a signed delta is added to the pointer (``g = p + d``)
partial  only the pointer's low byte is overwritten (``g >> 8 == p >> 8``)

Inputs are plain text dumps produced elsewhere (a disassembler pipeline);
nothing here decodes machine code.

Pointer dump, one per line::

    <label> <address>

Gadget dump, one per line; tokens after the address are semantic tags or
``load:<reg>`` (the gadget loads that register from memory), which is
mapped to tags through the platform's syscall convention::

    <address> [tag | load:<reg>] ...
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Iterable, Mapping

from .errors import GadgetInputError, UnpairedLabel
from .platform import PlatformSpec, StructDef, compute_struct_layout, layout_diverges

log = logging.getLogger(__name__)

TAGS = ("loads_syscall_num_reg", "loads_arg1", "loads_arg2", "loads_arg3", "other")
REPORT_TAGS = ("syscall#", "arg1", "arg2", "arg3")
_TAG_FOR = dict(zip(REPORT_TAGS, TAGS))
STRATEGIES = ("offset", "partial")
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class CodePointer:
    label: str
    address: int


@dataclass(frozen=True)
class Gadget:
    address: int
    tags: frozenset = frozenset()


@dataclass
class CodePointerSet:
    entries: dict[str, int] = field(default_factory=dict)  # label -> address

    @classmethod
    def of(cls, pairs: Iterable[tuple[str, int]]) -> CodePointerSet:
        out = cls()
        for label, addr in pairs:
            if label in out.entries:
                raise GadgetInputError(f"duplicate code pointer label {label!r}")
            out.entries[label] = addr & _U64
        return out

    def __len__(self):
        return len(self.entries)


@dataclass
class GadgetSet:
    entries: tuple[Gadget, ...] = ()
    align: int = 1  # instruction granularity of the ISA

    @classmethod
    def of(cls, gadgets: Iterable[Gadget | int], align: int = 1) -> GadgetSet:
        seen: dict[int, Gadget] = {}
        for g in gadgets:
            g = g if isinstance(g, Gadget) else Gadget(int(g))
            prev = seen.get(g.address)
            seen[g.address] = Gadget(g.address, g.tags | prev.tags) if prev else g
        return cls(tuple(sorted(seen.values(), key=lambda g: g.address)), align)

    def by_address(self) -> dict[int, Gadget]:
        return {g.address: g for g in self.entries}

    def __len__(self):
        return len(self.entries)


# parsing


def _lines(text: str):
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield n, line.split()


def _addr(tok: str, where: str) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise GadgetInputError(f"{where}: bad address {tok!r}") from None


def parse_pointers(text: str) -> CodePointerSet:
    pairs = []
    for n, toks in _lines(text):
        if len(toks) != 2:
            raise GadgetInputError(f"line {n}: expected '<label> <address>'")
        pairs.append((toks[0], _addr(toks[1], f"line {n}")))
    return CodePointerSet.of(pairs)


def tags_for_registers(platform: PlatformSpec | None, regs: Iterable[str]) -> frozenset:
    """Tags for a gadget that loads ``regs`` from memory, per the platform's
    syscall convention (number register, first three argument registers)."""
    regs = {r.lower() for r in regs}
    if platform is None:
        return frozenset({"other"}) if regs else frozenset()
    conv = platform.syscall_conv
    out = set()
    if conv.number.lower() in regs:
        out.add("loads_syscall_num_reg")
    for i, reg in enumerate(conv.args[:3], 1):
        if reg.lower() in regs:
            out.add(f"loads_arg{i}")
    if regs and not out:
        out.add("other")
    return frozenset(out)


def parse_gadgets(text: str, platform: PlatformSpec | None = None, align: int | None = None) -> GadgetSet:
    gadgets = []
    for n, toks in _lines(text):
        addr = _addr(toks[0], f"line {n}")
        tags, regs = set(), []
        for t in toks[1:]:
            if t.startswith("load:"):
                regs += [r for r in t[5:].split(",") if r]
                continue
            for part in t.split(","):
                if part in TAGS:
                    tags.add(part)
                elif part:
                    raise GadgetInputError(f"line {n}: unknown tag {part!r}")
        gadgets.append(Gadget(addr, frozenset(tags) | tags_for_registers(platform, regs)))
    if align is None:
        align = 4 if platform is not None and platform.name.startswith("arm") else 1
    return GadgetSet.of(gadgets, align)


def read_pointers(path: str | Path) -> CodePointerSet:
    return parse_pointers(Path(path).read_text())


def read_gadgets(path: str | Path, platform: PlatformSpec | None = None, align: int | None = None) -> GadgetSet:
    return parse_gadgets(Path(path).read_text(), platform, align)


# reachability


def _signed(v: int) -> int:
    v &= _U64
    return v - (1 << 64) if v >> 63 else v


def reachable_by_offset(ptrs: CodePointerSet, gadgets: GadgetSet) -> dict[str, set[tuple[int, int]]]:
    """label -> {(gadget address, signed offset from the pointer)}; every gadget
    is reachable with some offset."""
    return {
        label: {(g.address, _signed(g.address - p)) for g in gadgets.entries}
        for label, p in ptrs.entries.items()
    }


def reachable_by_partial_overwrite(ptrs: CodePointerSet, gadgets: GadgetSet) -> dict[str, set[int]]:
    """label -> gadget addresses that differ from the pointer only in the low byte."""
    pages: dict[int, set[int]] = defaultdict(set)
    for g in gadgets.entries:
        pages[g.address >> 8].add(g.address)
    return {label: set(pages.get(p >> 8, ())) for label, p in ptrs.entries.items()}


# survival


@dataclass
class LabelSurvival:
    label: str
    reachable_a: int
    reachable_b: int
    pairs: frozenset  # {(gadget A address, gadget B address)}

    @property
    def surviving_a(self) -> frozenset:
        return frozenset(a for a, _ in self.pairs)


@dataclass
class SurvivabilityReport:
    strategy: str
    align_b: int
    labels: dict[str, LabelSurvival] = field(default_factory=dict)
    tag_counts: dict[str, dict[str, int]] = field(default_factory=dict)  # tag -> label -> pairs
    unpaired: int = 0

    def surviving(self, label: str) -> frozenset:
        return self.labels[label].pairs

    @property
    def total_reachable_a(self) -> int:
        return sum(s.reachable_a for s in self.labels.values())

    @property
    def total_surviving_a(self) -> int:
        return sum(len(s.surviving_a) for s in self.labels.values())

    @property
    def survival_ratio(self) -> float:
        """Fraction of A-side reachable gadgets that still work on B."""
        total = self.total_reachable_a
        return self.total_surviving_a / total if total else 0.0

    def mean_pairs(self, tag: str | None = None) -> float:
        if not self.labels:
            return 0.0
        if tag is None:
            return mean(len(s.pairs) for s in self.labels.values())
        counts = self.tag_counts.get(tag, {})
        return mean(counts.get(l, 0) for l in self.labels)

    def mean_reachable_a(self) -> float:
        return mean(s.reachable_a for s in self.labels.values()) if self.labels else 0.0

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "align_b": self.align_b,
            "pointers": len(self.labels),
            "unpaired_labels": self.unpaired,
            "reachable_a": self.total_reachable_a,
            "surviving_a": self.total_surviving_a,
            "survival_ratio": self.survival_ratio,
            "mean_reachable_a": self.mean_reachable_a(),
            "mean_surviving": {"any": self.mean_pairs(), **{t: self.mean_pairs(t) for t in REPORT_TAGS}},
            "per_label": {
                l: {
                    "reachable_a": s.reachable_a,
                    "reachable_b": s.reachable_b,
                    "surviving": len(s.pairs),
                    **{t: self.tag_counts.get(t, {}).get(l, 0) for t in REPORT_TAGS},
                }
                for l, s in sorted(self.labels.items())
            },
        }

    def to_text(self) -> str:
        d = self.to_dict()
        ms = d["mean_surviving"]
        lines = [
            f"strategy {self.strategy}, B-side alignment {self.align_b}",
            f"  pointers {d['pointers']} (unpaired excluded: {self.unpaired})",
            f"  reachable A gadgets {d['reachable_a']}, surviving {d['surviving_a']} ({100 * d['survival_ratio']:.2f}%)",
            "  mean surviving per pointer: " + " ".join(f"{k}={v:.2f}" for k, v in ms.items()),
        ]
        return "\n".join(lines)


def _pair_labels(a: Mapping, b: Mapping, strict: bool) -> tuple[list[str], int]:
    shared = sorted(set(a) & set(b))
    unpaired = len(set(a) ^ set(b))
    if unpaired and strict:
        raise UnpairedLabel(f"labels in only one binary: {sorted(set(a) ^ set(b))[:5]}")
    if unpaired:
        log.warning("%d code pointer label(s) present in only one binary; excluded", unpaired)
    return shared, unpaired


def surviving_intersection(
    reach_a: Mapping,
    reach_b: Mapping,
    strategy: str,
    *,
    ptrs_a: CodePointerSet | None = None,
    ptrs_b: CodePointerSet | None = None,
    align_b: int = 4,
    strict: bool = False,
) -> SurvivabilityReport:
    """Pair A-side reachable gadgets with B-side ones hit by the same corruption.

    For ``offset`` the reachability values are ``{(addr, offset)}`` sets;
    B-side pairs whose address or offset is not a multiple of ``align_b``
    are dropped. For ``partial`` they are address sets and the pointer sets
    are needed to compute the B-side offset for the alignment filter.

    Labels present on one side only are excluded and counted in
    ``report.unpaired`` (or raise :class:`UnpairedLabel` when ``strict``).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    if align_b < 1:
        raise ValueError("align_b must be positive")
    labels, unpaired = _pair_labels(reach_a, reach_b, strict)
    report = SurvivabilityReport(strategy, align_b, unpaired=unpaired)
    for label in labels:
        ra, rb = reach_a[label], reach_b[label]
        pairs = set()
        if strategy == "offset":
            b_at = {off: addr for addr, off in rb if addr % align_b == 0 and off % align_b == 0}
            for addr, off in ra:
                if off in b_at:
                    pairs.add((addr, b_at[off]))
        else:
            if ptrs_b is None:
                raise ValueError("partial strategy needs the B-side pointers for alignment filtering")
            pb = ptrs_b.entries[label]
            b_low = {addr & 0xFF: addr for addr in rb if addr % align_b == 0 and (addr - pb) % align_b == 0}
            for addr in ra:
                if addr & 0xFF in b_low:
                    pairs.add((addr, b_low[addr & 0xFF]))
        report.labels[label] = LabelSurvival(label, len(ra), len(rb), frozenset(pairs))
    return report


def classify_semantics_filter(report: SurvivabilityReport, gadgets_a: GadgetSet, gadgets_b: GadgetSet, tag: str) -> dict[str, int]:
    """label -> surviving pairs where both gadgets carry ``tag`` (a report tag
    such as ``arg1`` or a raw tag name). Also stored on the report."""
    raw = _TAG_FOR.get(tag, tag)
    if raw not in TAGS:
        raise ValueError(f"unknown tag {tag!r}")
    ta, tb = gadgets_a.by_address(), gadgets_b.by_address()
    counts = {
        label: sum(1 for a, b in s.pairs if raw in ta[a].tags and raw in tb[b].tags)
        for label, s in report.labels.items()
    }
    report.tag_counts[tag] = counts
    return counts


def analyze(
    ptrs_a: CodePointerSet, gadgets_a: GadgetSet, ptrs_b: CodePointerSet, gadgets_b: GadgetSet,
    strategy: str = "offset", align_b: int | None = None,
) -> SurvivabilityReport:
    """Reachability on both sides, intersection, and per-tag counts."""
    reach = reachable_by_offset if strategy == "offset" else reachable_by_partial_overwrite
    report = surviving_intersection(
        reach(ptrs_a, gadgets_a), reach(ptrs_b, gadgets_b), strategy,
        ptrs_a=ptrs_a, ptrs_b=ptrs_b, align_b=gadgets_b.align if align_b is None else align_b,
    )
    for tag in REPORT_TAGS:
        classify_semantics_filter(report, gadgets_a, gadgets_b, tag)
    return report


# struct layouts


@dataclass
class DiversityReport:
    platform_a: str
    platform_b: str
    n_diverging: int
    n_total: int
    diffs: dict = field(default_factory=dict)  # struct -> LayoutDiff (only diverging ones)

    def __iter__(self):
        # unpacks as (n_diverging, n_total, diffs)
        return iter((self.n_diverging, self.n_total, self.diffs))

    def to_text(self) -> str:
        lines = [f"{self.n_diverging} of {self.n_total} structs differ between {self.platform_a} and {self.platform_b}"]
        for name, d in sorted(self.diffs.items()):
            lines.append(f"  {name}: size {d.size_a} vs {d.size_b}")
            for f in d.fields:
                lines.append(f"    {f.name}: offset {f.offset_a} vs {f.offset_b}, size {f.size_a} vs {f.size_b}")
        return "\n".join(lines)


def layout_diversity_report(defs: Iterable[StructDef] | Mapping[str, StructDef], platform_a: PlatformSpec, platform_b: PlatformSpec) -> DiversityReport:
    defs = list(defs.values()) if isinstance(defs, Mapping) else list(defs)
    diffs = {}
    for d in defs:
        diff = layout_diverges(compute_struct_layout(platform_a, d), compute_struct_layout(platform_b, d))
        if diff:
            diffs[d.name] = diff
    return DiversityReport(platform_a.name, platform_b.name, len(diffs), len(defs), diffs)
