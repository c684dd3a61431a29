import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FIXTURES
from nvxsim.errors import AbiError, InvalidStructDef, MismatchedDef, UnknownFlagBits, UnknownSyscall, UnknownType
from nvxsim.platform import (
    CanonicalSyscallId as S,
    FieldDef,
    Foldable,
    StructDef,
    builtin_platform_names,
    compute_struct_layout,
    layout_diverges,
    load_platform,
    load_struct_defs,
    lookup_canonical_id,
    normalize_flags,
    parse_platform,
)
from strategies import BASE_DOCS, random_platform_doc

BUILTINS = builtin_platform_names()


def tiny(name="fx", bits=None, width=8):
    doc = {
        "platform": {"name": name, "endianness": "little", "pointer_width": width},
        "syscalls": {"WRITE": 1},
        "flags": {"OPENAT": {"3": bits or {"APPEND": 0x400}}},
        "types": {"u8": {"size": 1, "align": 1}, "u16": {"size": 2, "align": 2}, "u32": {"size": 4, "align": 4}},
        "conventions": {"call_args": ["r0"], "call_result": ["r0"], "syscall_number": "r7",
                        "syscall_args": ["r0", "r1", "r2"], "syscall_result": "r0"},
    }
    return parse_platform(doc)


def sdef(*types):
    return StructDef("s", tuple(FieldDef(f"f{i}", t) for i, t in enumerate(types)))


@pytest.mark.parametrize("plat,raw", [("x86_64", 0), ("i386", 3), ("armv7_eabi", 0x900003)])
def test_read_numbers(plat, raw):
    assert lookup_canonical_id(load_platform(plat), raw) is S.READ


def test_open_is_foldable_marker():
    assert lookup_canonical_id(load_platform("x86_64"), 2) is Foldable.OPEN
    assert Foldable.OPEN.target is S.OPENAT
    assert not load_platform("armv8").supports(Foldable.OPEN)


def test_unknown_number():
    with pytest.raises(UnknownSyscall):
        lookup_canonical_id(load_platform("x86_64"), 99999)


def test_flag_table_lookup():
    a = tiny("a", {"APPEND": 0x400})
    b = tiny("b", {"APPEND": 0x2000})
    assert normalize_flags(a, S.OPENAT, 3, 0x400) == {"APPEND"}
    assert normalize_flags(b, S.OPENAT, 3, 0x2000) == {"APPEND"}
    assert normalize_flags(a, S.OPENAT, 3, 0) == frozenset()


def test_flag_residue_is_reported():
    with pytest.raises(UnknownFlagBits) as e:
        normalize_flags(tiny(), S.OPENAT, 3, 0x401)
    assert e.value.residue == 0x1


@pytest.mark.parametrize("name", BUILTINS)
def test_number_table_round_trip(name):
    p = load_platform(name)
    for raw, key in p.syscall_table.items():
        assert p.number_of(key) == raw
        assert lookup_canonical_id(p, p.number_of(key)) is key


@pytest.mark.parametrize("name", BUILTINS)
def test_number_register_is_not_an_argument(name):
    c = load_platform(name).syscall_conv
    assert c.number not in c.args


def test_arm_and_x86_use_different_number_registers():
    assert load_platform("x86_64").syscall_conv.number != load_platform("armv7_eabi").syscall_conv.number


@given(st.sampled_from(BUILTINS), st.data())
def test_flag_normalization_is_monotone(name, data):
    p = load_platform(name)
    (sid, idx), table = data.draw(st.sampled_from(sorted(p.flag_tables.items(), key=lambda kv: (kv[0][0].name, kv[0][1]))))
    bits = sorted(table)
    small = data.draw(st.sets(st.sampled_from(bits)))
    extra = data.draw(st.sets(st.sampled_from(bits)))
    raw = sum(small)
    raw2 = raw | sum(extra)
    assert normalize_flags(p, sid, idx, raw) <= normalize_flags(p, sid, idx, raw2)


def test_duplicate_raw_number_rejected():
    doc = dict(BASE_DOCS["x86_64"])
    doc["syscalls"] = {"READ": 0, "WRITE": 0}
    with pytest.raises(AbiError):
        parse_platform(doc)


def test_bad_alignment_rejected():
    doc = dict(BASE_DOCS["x86_64"])
    doc["types"] = {"u32": {"size": 4, "align": 3}}
    with pytest.raises(AbiError):
        parse_platform(doc)


def test_number_register_doubling_as_argument_rejected():
    doc = dict(BASE_DOCS["x86_64"])
    conv = dict(doc["conventions"])
    conv["syscall_number"] = conv["syscall_args"][0]
    doc["conventions"] = conv
    with pytest.raises(AbiError):
        parse_platform(doc)


# struct layouts


def test_single_byte_struct():
    for name in BUILTINS:
        lay = compute_struct_layout(load_platform(name), sdef("u8"))
        assert (lay.offsets, lay.size, lay.align) == ((0,), 1, 1)


def test_char_then_pointer():
    l8 = compute_struct_layout(load_platform("x86_64"), sdef("u8", "ptr"))
    l4 = compute_struct_layout(load_platform("armv7_eabi"), sdef("u8", "ptr"))
    assert (l8.offsets, l8.size) == ((0, 8), 16)
    assert (l4.offsets, l4.size) == ((0, 4), 8)
    d = layout_diverges(l8, l4)
    assert [(f.index, f.offset_a, f.offset_b) for f in d.fields] == [(2, 8, 4)]
    assert (d.size_a, d.size_b) == (16, 8)


def test_u32_then_u16():
    lay = compute_struct_layout(load_platform("i386"), sdef("u32", "u16"))
    assert (lay.offsets, lay.size) == ((0, 4), 8)


def test_identical_layouts_do_not_diverge():
    a = compute_struct_layout(load_platform("x86_64"), sdef("u32", "ptr"))
    assert not layout_diverges(a, a)


def test_bytes_only_never_diverge():
    d = sdef("u8", "u8", "char")
    a = compute_struct_layout(load_platform("x86_64"), d)
    b = compute_struct_layout(load_platform("i386"), d)
    assert not layout_diverges(a, b)


def test_mismatched_defs():
    p = load_platform("x86_64")
    with pytest.raises(MismatchedDef):
        layout_diverges(compute_struct_layout(p, sdef("u8")), compute_struct_layout(p, sdef("u8", "u8")))


def test_unknown_field_type():
    with pytest.raises(UnknownType):
        compute_struct_layout(load_platform("x86_64"), sdef("u8", "quad"))


@pytest.mark.parametrize("spec", [
    {"fields": []},
    {"fields": [["a", "u8"], ["a", "u16"]]},
    {"fields": [["a", "u32:3"]]},
    {"fields": [{"name": "a", "type": "u32", "bits": 3}]},
    {"union": True, "fields": [["a", "u8"]]},
    {"packed": True, "fields": [["a", "u8"]]},
    {"fields": [["a", "u8", 0]]},
])
def test_unsupported_struct_defs(spec):
    with pytest.raises(InvalidStructDef):
        StructDef.from_spec("bad", spec)


TYPES = ["u8", "i8", "char", "u16", "i16", "u32", "i32", "u64", "i64", "long", "ulong", "f32", "f64", "ptr"]


@given(st.lists(st.tuples(st.sampled_from(TYPES), st.none() | st.integers(1, 5)), min_size=1, max_size=12),
       st.sampled_from(BUILTINS))
def test_layout_invariants(fields, name):
    d = StructDef("s", tuple(FieldDef(f"f{i}", t, n) for i, (t, n) in enumerate(fields)))
    p = load_platform(name)
    lay = compute_struct_layout(p, d)
    assert all(a < b for a, b in zip(lay.offsets, lay.offsets[1:]))
    for (t, _), off in zip(fields, lay.offsets):
        assert off % p.metric(t).align == 0
    assert lay.size % lay.align == 0
    assert compute_struct_layout(p, d) == lay


@given(st.lists(st.sampled_from(["u8", "char", "u16", "i8"]), min_size=1, max_size=6), st.lists(st.sampled_from(TYPES), max_size=4))
def test_pointer_after_smaller_field_diverges(prefix, suffix):
    d = sdef(*prefix, "ptr", *suffix)
    a = compute_struct_layout(load_platform("x86_64"), d)
    b = compute_struct_layout(load_platform("armv7_eabi"), d)
    assert layout_diverges(a, b)


def test_random_descriptors_parse():
    r = random.Random(7)
    for _ in range(50):
        p = parse_platform(random_platform_doc(r))
        for raw, key in p.syscall_table.items():
            assert lookup_canonical_id(p, raw) is key


# reference compiler offsets

REFERENCE = json.loads((FIXTURES / "struct_reference.json").read_text())
DEFS30 = load_struct_defs(FIXTURES / "structs30.toml")


def test_fixture_has_thirty_structs():
    assert len(DEFS30) == 30
    for t in REFERENCE["targets"].values():
        assert set(t["structs"]) == set(DEFS30)


@pytest.mark.parametrize("target", sorted(REFERENCE["targets"]))
def test_layouts_match_reference_compiler(target):
    ref = REFERENCE["targets"][target]
    p = load_platform(ref["platform"])
    for name, d in DEFS30.items():
        lay = compute_struct_layout(p, d)
        want = ref["structs"][name]
        assert list(lay.offsets) == want["offsets"], name
        assert (lay.size, lay.align) == (want["size"], want["align"]), name
