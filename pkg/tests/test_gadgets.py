import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import REPO
from gadget_oracle import brute_pairs, numpy_pairs, random_instance, survives, tag_counts
from nvxsim.errors import GadgetInputError, UnpairedLabel
from nvxsim.gadgets import (
    REPORT_TAGS,
    CodePointerSet,
    Gadget,
    GadgetSet,
    analyze,
    classify_semantics_filter,
    layout_diversity_report,
    parse_gadgets,
    parse_pointers,
    reachable_by_offset,
    reachable_by_partial_overwrite,
    read_gadgets,
    read_pointers,
    surviving_intersection,
)
from nvxsim.platform import FieldDef, StructDef, load_platform, load_struct_defs

X86, ARM = load_platform("x86_64"), load_platform("armv7_eabi")


def P(**kw):
    return CodePointerSet.of(kw.items())


def G(*addrs, align=1):
    return GadgetSet.of([a if isinstance(a, Gadget) else Gadget(a) for a in addrs], align)


# reachability


def test_offset_forward_and_backward():
    r = reachable_by_offset(P(f=0x1000), G(0x1010, 0x0FF0))
    assert r == {"f": {(0x1010, 0x10), (0x0FF0, -0x10)}}


def test_offset_with_no_gadgets():
    assert reachable_by_offset(P(f=0x1000, g=0x2000), G()) == {"f": set(), "g": set()}


def test_partial_overwrite_same_page():
    r = reachable_by_partial_overwrite(P(f=0x401234), G(0x4012FF, 0x401334, 0x401234))
    assert r["f"] == {0x4012FF, 0x401234}


# survival


def test_aligned_offset_survives():
    rep = surviving_intersection(reachable_by_offset(P(f=0x1000), G(0x1008)),
                                 reachable_by_offset(P(f=0x8000), G(0x8008)), "offset")
    assert rep.surviving("f") == {(0x1008, 0x8008)}


def test_misaligned_offset_eliminated():
    rep = surviving_intersection(reachable_by_offset(P(f=0x1000), G(0x1006)),
                                 reachable_by_offset(P(f=0x8000), G(0x8006)), "offset")
    assert rep.surviving("f") == frozenset()
    assert rep.survival_ratio == 0.0


def test_partial_filter_checks_b_offset():
    pa, pb = P(f=0x401200), P(f=0x10502)
    ga, gb = G(0x401208), G(0x10508)  # B address aligned, offset 6 is not
    rep = surviving_intersection(reachable_by_partial_overwrite(pa, ga), reachable_by_partial_overwrite(pb, gb),
                                 "partial", ptrs_b=pb)
    assert rep.surviving("f") == frozenset()


def test_unpaired_labels_are_counted():
    rep = analyze(P(f=0x1000, g=0x2000), G(0x1004), P(f=0x9000, h=0x3000), G(0x9004))
    assert rep.unpaired == 2 and set(rep.labels) == {"f"}
    with pytest.raises(UnpairedLabel):
        surviving_intersection({"f": set()}, {"g": set()}, "offset", strict=True)


def test_bad_arguments():
    with pytest.raises(ValueError):
        surviving_intersection({}, {}, "full")
    with pytest.raises(ValueError):
        surviving_intersection({}, {}, "offset", align_b=0)
    with pytest.raises(ValueError):
        surviving_intersection({"f": {1}}, {"f": {1}}, "partial")


# semantic tags


def test_no_b_side_syscall_gadget_means_zero():
    ga = G(Gadget(0x1004, frozenset({"loads_syscall_num_reg"})))
    gb = G(Gadget(0x9004, frozenset({"loads_arg1"})))
    rep = analyze(P(f=0x1000), ga, P(f=0x9000), gb, align_b=4)
    assert len(rep.surviving("f")) == 1
    assert rep.tag_counts["syscall#"] == {"f": 0}


def test_both_sides_tagged_is_counted():
    ga = G(Gadget(0x1004, frozenset({"loads_arg1", "other"})))
    gb = G(Gadget(0x9004, frozenset({"loads_arg1"})))
    rep = analyze(P(f=0x1000), ga, P(f=0x9000), gb, align_b=4)
    assert classify_semantics_filter(rep, ga, gb, "arg1") == {"f": 1}
    with pytest.raises(ValueError):
        classify_semantics_filter(rep, ga, gb, "arg9")


def test_register_loads_map_through_syscall_convention():
    gx = parse_gadgets("0x10 load:rax\n0x20 load:rdi,rsi\n0x30 load:rbx\n", X86)
    ga = parse_gadgets("0x10 load:r7\n0x20 load:r0\n", ARM)
    tags = {g.address: g.tags for g in gx.entries}
    assert tags[0x10] == {"loads_syscall_num_reg"}
    assert tags[0x20] == {"loads_arg1", "loads_arg2"}
    assert tags[0x30] == {"other"}
    assert {g.address: g.tags for g in ga.entries} == {0x10: {"loads_syscall_num_reg"}, 0x20: {"loads_arg1"}}
    assert (gx.align, ga.align) == (1, 4)


def test_parse_errors():
    with pytest.raises(GadgetInputError):
        parse_pointers("f 0x10\nf 0x20\n")
    with pytest.raises(GadgetInputError):
        parse_pointers("f\n")
    with pytest.raises(GadgetInputError):
        parse_gadgets("0x10 loads_everything\n")
    with pytest.raises(GadgetInputError):
        parse_gadgets("zz other\n")


def test_comment_lines_and_merging():
    g = parse_gadgets("# dump\n0x10 loads_arg1  # first\n0x10 other\n\n")
    assert g.entries == (Gadget(0x10, frozenset({"loads_arg1", "other"})),)


def test_shipped_dumps():
    d = REPO / "scenarios" / "gadgets"
    rep = analyze(read_pointers(d / "x86_64.ptrs"), read_gadgets(d / "x86_64.gadgets", X86),
                  read_pointers(d / "armv7_eabi.ptrs"), read_gadgets(d / "armv7_eabi.gadgets", ARM))
    assert 0 < rep.survival_ratio < 1
    assert "surviving" in rep.to_text()


# oracle and properties


def _check_against(oracle, inst, strategy, align):
    pa, ga, pb, gb = inst
    rep = analyze(pa, ga, pb, gb, strategy, align_b=align)
    want = oracle(pa, ga, pb, gb, strategy, align)
    assert {l: set(s.pairs) for l, s in rep.labels.items()} == want
    for tag in REPORT_TAGS:
        assert rep.tag_counts[tag] == tag_counts(want, ga, gb, tag)
    return rep


@settings(max_examples=60, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from(["offset", "partial"]), st.sampled_from([1, 2, 4]))
def test_matches_brute_force(rng, strategy, align):
    _check_against(brute_pairs, random_instance(rng, 12, 30), strategy, align)


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from(["offset", "partial"]))
def test_numpy_oracle_agrees_with_plain_loops(rng, strategy):
    inst = random_instance(rng, 10, 25)
    assert numpy_pairs(*inst, strategy, 4) == brute_pairs(*inst, strategy, 4)


def test_survival_rule_examples():
    assert survives("offset", 0x1000, 0x1008, 0x8000, 0x8008, 4)
    assert not survives("offset", 0x1000, 0x1006, 0x8000, 0x8006, 4)
    assert survives("partial", 0x401234, 0x4012F0, 0x10500, 0x105F0, 4)


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from(["offset", "partial"]))
def test_adding_gadgets_never_shrinks(rng, strategy):
    pa, ga, pb, gb = random_instance(rng, 8, 30, unpaired=False)
    _, more_a, _, more_b = random_instance(rng, 1, 30, unpaired=False)
    small = analyze(pa, ga, pb, gb, strategy, align_b=4)
    big = analyze(pa, GadgetSet.of(ga.entries + more_a.entries), pb, GadgetSet.of(gb.entries + more_b.entries), strategy, align_b=4)
    for label, s in small.labels.items():
        assert s.pairs <= big.labels[label].pairs


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from(["offset", "partial"]))
def test_homogeneous_baseline_is_total(rng, strategy):
    pa, ga, _, _ = random_instance(rng, 10, 40, unpaired=False)
    rep = analyze(pa, ga, pa, ga, strategy, align_b=1)
    assert rep.total_reachable_a == 0 or rep.survival_ratio == 1.0


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False))
def test_partial_within_offset_when_low_bytes_agree(rng):
    pa, ga, pb, gb = random_instance(rng, 10, 40, unpaired=False)
    pb = CodePointerSet.of((l, (pb.entries[l] & ~0xFF) | (a & 0xFF)) for l, a in pa.entries.items())
    part = analyze(pa, ga, pb, gb, "partial", align_b=4)
    off = analyze(pa, ga, pb, gb, "offset", align_b=4)
    for label, s in part.labels.items():
        assert s.pairs <= off.labels[label].pairs


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from(["offset", "partial"]))
def test_surviving_within_reachable(rng, strategy):
    pa, ga, pb, gb = random_instance(rng, 10, 40)
    rep = analyze(pa, ga, pb, gb, strategy, align_b=4)
    assert 0.0 <= rep.survival_ratio <= 1.0
    for s in rep.labels.values():
        assert len(s.surviving_a) <= s.reachable_a


# struct layout diversity


def test_all_u8_structs_never_differ():
    defs = [StructDef(f"s{i}", tuple(FieldDef(f"f{j}", "u8") for j in range(i + 1))) for i in range(5)]
    n, total, diffs = layout_diversity_report(defs, X86, ARM)
    assert (n, total, diffs) == (0, 5, {})


def test_char_before_pointer_always_differs():
    defs = [StructDef(f"s{i}", (FieldDef("c", "char", i + 1), FieldDef("p", "ptr"))) for i in range(7)]
    n, total, _ = layout_diversity_report(defs, X86, ARM)
    assert n == total == 7


def test_builtin_struct_report_text():
    rep = layout_diversity_report(load_struct_defs(), X86, ARM)
    assert rep.to_text().startswith(f"{rep.n_diverging} of {rep.n_total} structs differ")


# Diverging-struct counts over the 30-struct corpus, derived from clang
# (tests/fixtures/struct_reference.json) and frozen here.
FROZEN_DIVERGING = {
    ("x86_64", "armv7_eabi"): 14,
    ("x86_64", "i386"): 19,
    ("x86_64", "armv8"): 0,
    ("armv7_eabi", "i386"): 6,
    ("i386", "armv8"): 19,
    ("armv7_eabi", "armv8"): 14,
}


@pytest.mark.parametrize("pair", sorted(FROZEN_DIVERGING), ids="/".join)
def test_frozen_diverging_counts(pair):
    defs = load_struct_defs(REPO / "tests" / "fixtures" / "structs30.toml")
    n, total, diffs = layout_diversity_report(defs, load_platform(pair[0]), load_platform(pair[1]))
    assert (n, total) == (FROZEN_DIVERGING[pair], 30)


def test_x86_arm_diverging_names():
    defs = load_struct_defs(REPO / "tests" / "fixtures" / "structs30.toml")
    _, _, diffs = layout_diversity_report(defs, X86, ARM)
    assert sorted(diffs) == ["flock", "iovec", "itimerval", "linked_node", "mixed_char_ptr", "msghdr", "rlimit",
                             "sigaction", "stack_t", "stat", "sysinfo", "timespec", "timeval", "tms"]
