#!/usr/bin/env python3
"""Derive reference struct layouts from clang for four Linux targets.

Each struct in the defs file becomes a C struct; the field offsets, size and
alignment are read back from the LLVM IR of a global array initialised with
``__builtin_offsetof``/``sizeof``/``_Alignof``, so no target sysroot is needed.

    python3 scripts/gen_struct_reference.py \
        --defs tests/fixtures/structs30.toml --out tests/fixtures/struct_reference.json
"""

from __future__ import annotations

import argparse
import json
import re
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

from nvxsim.platform import load_struct_defs

TARGETS = {
    "i386-linux-gnu": "i386",
    "x86_64-linux-gnu": "x86_64",
    "armv7-linux-gnueabi": "armv7_eabi",
    "aarch64-linux-gnu": "armv8",
}

C_TYPES = {
    "u8": "unsigned char", "i8": "signed char", "char": "char",
    "u16": "unsigned short", "i16": "short", "u32": "unsigned int", "i32": "int",
    "u64": "unsigned long long", "i64": "long long", "long": "long", "ulong": "unsigned long",
    "f32": "float", "f64": "double", "ptr": "void *",
}


def c_source(defs) -> str:
    out = []
    for d in defs.values():
        members = []
        for f in d.fields:
            dim = f"[{f.count}]" if f.count is not None else ""
            members.append(f"    {C_TYPES[f.type]} {f.name}{dim};")
        out.append(f"struct {d.name} {{\n" + "\n".join(members) + "\n};")
        vals = [f"__builtin_offsetof(struct {d.name}, {f.name})" for f in d.fields]
        vals += [f"sizeof(struct {d.name})", f"_Alignof(struct {d.name})"]
        out.append(f"unsigned long long layout_{d.name}[] = {{ {', '.join(vals)} }};")
    return "\n".join(out) + "\n"


_GLOBAL = re.compile(r"^@layout_(\w+) = .*?\[\d+ x i64\] \[(.*?)\]", re.M)


def layouts_for(target: str, src: Path, clang: str) -> dict:
    ir = subprocess.run(
        [clang, "-target", target, "-S", "-emit-llvm", "-o", "-", str(src)],
        check=True, capture_output=True, text=True,
    ).stdout
    out = {}
    for name, body in _GLOBAL.findall(ir):
        nums = [int(tok.split()[1]) for tok in body.split(",")]
        out[name] = {"offsets": nums[:-2], "size": nums[-2], "align": nums[-1]}
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--defs", default="tests/fixtures/structs30.toml")
    ap.add_argument("--out", default="tests/fixtures/struct_reference.json")
    ap.add_argument("--clang", default=shutil.which("clang") or "clang")
    args = ap.parse_args(argv)

    defs = load_struct_defs(args.defs)
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "layouts.c"
        src.write_text(c_source(defs))
        result = {
            "compiler": subprocess.run([args.clang, "--version"], capture_output=True, text=True).stdout.splitlines()[0],
            "targets": {t: {"platform": p, "structs": layouts_for(t, src, args.clang)} for t, p in TARGETS.items()},
        }
    for t, r in result["targets"].items():
        missing = set(defs) - set(r["structs"])
        if missing:
            print(f"{t}: no layout for {sorted(missing)}", file=sys.stderr)
            return 1
    Path(args.out).write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(defs)} structs x {len(TARGETS)} targets to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
