"""Built-in scenarios: a benign x86-64 vs ARMv7 corpus, a mixed program for
checking per-call message counts, and a static-file read benchmark.

Every benign scenario is tagged with the kinds of benign ABI divergence it
exercises:

``numbers``  syscall numbers differ (true of every scenario)
``flags``    flag bit values differ (DIRECTORY, NOFOLLOW, LARGEFILE, ...)
``structs``  native struct layouts differ (stat, timespec, timeval)
``open``     one variant calls OPEN where the other calls OPENAT
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ScenarioConfig, scenario_from_dict

CATEGORIES = ("numbers", "flags", "structs", "open")

FILES = {
    "/app/etc/app.conf": "listen=8080\nworkers=2\nlog=/app/var/app.log\n",
    "/app/etc/mime.types": "html text/html\ncss text/css\npng image/png\n",
    "/app/www/index.html": "<html><body><h1>It works</h1></body></html>\n",
    "/app/www/style.css": "body { font-family: sans-serif; }\n",
    "/app/www/logo.png": {"hex": "89504e470d0a1a0a0000000d49484452" * 4},
    "/app/data/records.bin": {"hex": "".join(f"{i:02x}" for i in range(256))},
    "/app/README": "static demo tree\n",
}
DIRS = ["/app/var", "/app/tmp"]

GET_INDEX = "GET /index.html HTTP/1.0\r\nHost: demo\r\n\r\n"
GET_STYLE = "GET /style.css HTTP/1.0\r\n\r\n"


@dataclass
class CorpusEntry:
    config: ScenarioConfig
    categories: frozenset = field(default_factory=frozenset)

    @property
    def name(self) -> str:
        return self.config.name


def _variants(leader_platform: str = "x86_64", *, x86_open: bool = False) -> list[dict]:
    x86 = {"name": "x86", "platform": "x86_64"}
    if x86_open:
        x86["render"] = {"use_open": True}
    arm = {"name": "arm", "platform": "armv7_eabi"}
    return [x86, arm] if leader_platform == "x86_64" else [arm, x86]


def _scenario(name, steps, *, leader="x86", x86_open=False, connections=(), extra=None) -> ScenarioConfig:
    doc = {
        "name": name,
        "leader": leader,
        "fs": {"files": FILES, "dirs": DIRS},
        "world": {"connection": [{"port": p, "inbound": list(chunks)} for p, chunks in connections]},
        "variant": _variants("x86_64" if leader == "x86" else "armv7_eabi", x86_open=x86_open),
        "step": steps,
    }
    doc.update(extra or {})
    return scenario_from_dict(doc)


def _server_prologue(port=8080):
    return [
        {"op": "socket", "as": "srv"},
        {"op": "bind", "fd": "srv", "port": port},
        {"op": "listen", "fd": "srv", "backlog": 8},
    ]


def benign_corpus() -> list[CorpusEntry]:
    E = CorpusEntry
    out = [
        E(_scenario("static-config-read", [
            {"op": "open", "path": "/app/etc/app.conf", "as": "c"},
            {"op": "read", "fd": "c", "count": 16},
            {"op": "read", "fd": "c", "count": 64},
            {"op": "read", "fd": "c", "count": 64},
            {"op": "close", "fd": "c"},
        ]), {"numbers", "flags"}),
        E(_scenario("open-vs-openat", [
            {"op": "open", "path": "/app/etc/mime.types", "as": "m"},
            {"op": "read", "fd": "m", "count": 128},
            {"op": "close", "fd": "m"},
            {"op": "open", "path": "etc/app.conf", "as": "c"},
            {"op": "fstat", "fd": "c"},
            {"op": "close", "fd": "c"},
        ], x86_open=True), {"numbers", "open", "flags", "structs"}),
        E(_scenario("directory-relative-open", [
            {"op": "open", "path": "/app/www", "flags": ["DIRECTORY"], "as": "d"},
            {"op": "open", "path": "index.html", "relative_to": "d", "as": "f"},
            {"op": "read", "fd": "f", "count": 256},
            {"op": "close", "fd": "f"},
            {"op": "close", "fd": "d"},
        ]), {"numbers", "flags"}),
        E(_scenario("fstat-layouts", [
            {"op": "open", "path": "/app/www/logo.png", "as": "f"},
            {"op": "fstat", "fd": "f"},
            {"op": "fstat", "fd": 1},
            {"op": "open", "path": "/app/var/out.txt", "flags": ["WRONLY", "CREAT", "TRUNC"], "as": "o"},
            {"op": "write", "fd": "o", "data": "0123456789"},
            {"op": "fstat", "fd": "o"},
            {"op": "close", "fd": "o"},
            {"op": "close", "fd": "f"},
        ]), {"numbers", "structs", "flags"}),
        E(_scenario("time-structs", [
            {"op": "gettimeofday"},
            {"op": "clock_gettime", "clock": 1},
            {"op": "nanosleep", "sec": 0, "nsec": 500000},
            {"op": "clock_gettime", "clock": 0},
            {"op": "nanosleep", "sec": 1, "nsec": 0},
            {"op": "gettimeofday"},
        ]), {"numbers", "structs"}),
        E(_scenario("identity-queries", [
            {"op": "uname"},
            {"op": "getuid"},
            {"op": "getcwd", "size": 128},
            {"op": "getppid"},
            {"op": "sched_yield"},
        ]), {"numbers", "structs"}),
        E(_scenario("pid-cache", [
            {"op": "getpid"}, {"op": "getpid"}, {"op": "getppid"},
            {"op": "getpid"}, {"op": "getppid"}, {"op": "getpid"},
        ]), {"numbers"}),
        E(_scenario("http-echo", _server_prologue() + [
            {"op": "accept", "fd": "srv", "as": "k"},
            {"op": "recvfrom", "fd": "k", "count": 256, "as": "req"},
            {"op": "sendto", "fd": "k", "data_from": "req"},
            {"op": "close", "fd": "k"},
            {"op": "close", "fd": "srv"},
        ], connections=[(8080, [GET_INDEX])]), {"numbers", "structs"}),
        E(_scenario("static-web-server", _server_prologue() + [
            {"op": "open", "path": "/app/www", "flags": ["DIRECTORY"], "as": "root"},
            {"op": "accept", "fd": "srv", "as": "k"},
            {"op": "recvfrom", "fd": "k", "count": 512, "as": "req"},
            {"op": "open", "path": "index.html", "relative_to": "root", "as": "f"},
            {"op": "fstat", "fd": "f"},
            {"op": "read", "fd": "f", "count": 4096, "as": "body"},
            {"op": "sendto", "fd": "k", "data": "HTTP/1.0 200 OK\r\n\r\n"},
            {"op": "sendto", "fd": "k", "data_from": "body"},
            {"op": "close", "fd": "f"},
            {"op": "close", "fd": "k"},
        ], connections=[(8080, [GET_INDEX])]), {"numbers", "flags", "structs"}),
        E(_scenario("append-log", [
            {"op": "open", "path": "/app/var/app.log", "flags": ["WRONLY", "CREAT", "APPEND"], "mode": 0o640, "as": "log"},
            {"op": "write", "fd": "log", "data": "boot\n"},
            {"op": "gettimeofday"},
            {"op": "write", "fd": "log", "data": "ready\n"},
            {"op": "fstat", "fd": "log"},
            {"op": "close", "fd": "log"},
        ], x86_open=True), {"numbers", "flags", "open", "structs"}),
        E(_scenario("write-then-read-back", [
            {"op": "open", "path": "/app/tmp/scratch", "flags": ["RDWR", "CREAT"], "as": "s"},
            {"op": "write", "fd": "s", "data": "scratch contents"},
            {"op": "lseek", "fd": "s", "offset": 0, "whence": 0},
            {"op": "read", "fd": "s", "count": 64, "as": "back"},
            {"op": "write", "fd": 1, "data_from": "back"},
            {"op": "close", "fd": "s"},
        ]), {"numbers", "flags"}),
        E(_scenario("heap-management", [
            {"op": "brk", "addr": 0},
            {"op": "mmap", "length": 65536, "as": "a"},
            {"op": "mmap", "length": 4096, "prot": ["PROT_READ"], "as": "b"},
            {"op": "munmap", "addr_from": "b", "length": 4096},
            {"op": "munmap", "addr_from": "a", "length": 65536},
        ]), {"numbers", "flags"}),
        E(_scenario("dup-stdout", [
            {"op": "dup", "fd": 1, "as": "out"},
            {"op": "write", "fd": "out", "data": "via dup\n"},
            {"op": "write", "fd": 1, "data": "via stdout\n"},
            {"op": "close", "fd": "out"},
        ]), {"numbers"}),
        E(_scenario("mkdir-and-create", [
            {"op": "mkdirat", "path": "/app/var/cache"},
            {"op": "open", "path": "/app/var/cache", "flags": ["DIRECTORY"], "as": "d"},
            {"op": "open", "path": "entry", "relative_to": "d", "flags": ["WRONLY", "CREAT", "EXCL"], "as": "e"},
            {"op": "write", "fd": "e", "data": "cached"},
            {"op": "close", "fd": "e"},
            {"op": "mkdirat", "path": "sub", "relative_to": "d"},
            {"op": "close", "fd": "d"},
        ]), {"numbers", "flags"}),
        E(_scenario("error-results", [
            {"op": "open", "path": "/app/missing.txt", "as": "nope"},
            {"op": "open", "path": "/app/www", "flags": ["WRONLY"]},
            {"op": "read", "fd": 99, "count": 8},
            {"op": "open", "path": "/app/README", "flags": ["DIRECTORY"]},
            {"op": "mkdirat", "path": "/app/www"},
            {"op": "lseek", "fd": 1, "offset": 0, "whence": 0},
        ], x86_open=True), {"numbers", "flags", "open"}),
        E(_scenario("seek-static", [
            {"op": "open", "path": "/app/data/records.bin", "as": "r"},
            {"op": "lseek", "fd": "r", "offset": 128, "whence": 0},
            {"op": "read", "fd": "r", "count": 16},
            {"op": "lseek", "fd": "r", "offset": -8, "whence": 2},
            {"op": "read", "fd": "r", "count": 16},
            {"op": "fstat", "fd": "r"},
            {"op": "close", "fd": "r"},
        ]), {"numbers", "structs", "flags"}),
        E(_scenario("open-flag-mix", [
            {"op": "open", "path": "/app/etc/app.conf", "flags": ["NOFOLLOW", "CLOEXEC", "NONBLOCK"], "as": "a"},
            {"op": "open", "path": "/app/www", "flags": ["DIRECTORY", "CLOEXEC"], "as": "b"},
            {"op": "open", "path": "/app/var/direct.bin", "flags": ["RDWR", "CREAT", "DIRECT"], "as": "c"},
            {"op": "write", "fd": "c", "data": "x" * 32},
            {"op": "close", "fd": "c"},
            {"op": "close", "fd": "b"},
            {"op": "close", "fd": "a"},
        ], x86_open=True), {"numbers", "flags", "open"}),
        E(_scenario("two-connections", _server_prologue(9090) + [
            {"op": "accept", "fd": "srv", "as": "k1"},
            {"op": "recvfrom", "fd": "k1", "count": 512, "as": "r1"},
            {"op": "sendto", "fd": "k1", "data": "HTTP/1.0 200 OK\r\n\r\nfirst"},
            {"op": "close", "fd": "k1"},
            {"op": "accept", "fd": "srv", "as": "k2"},
            {"op": "recvfrom", "fd": "k2", "count": 8, "as": "r2a"},
            {"op": "recvfrom", "fd": "k2", "count": 512, "as": "r2b"},
            {"op": "sendto", "fd": "k2", "data_from": "r2b"},
            {"op": "close", "fd": "k2"},
        ], connections=[(9090, [GET_INDEX]), (9090, [GET_STYLE])]), {"numbers", "structs"}),
        E(_scenario("socket-flags", _server_prologue() + [
            {"op": "accept", "fd": "srv", "as": "k"},
            {"op": "recvfrom", "fd": "k", "count": 4, "flags": ["MSG_PEEK"], "as": "peek"},
            {"op": "recvfrom", "fd": "k", "count": 256, "flags": ["MSG_WAITALL"], "as": "req"},
            {"op": "sendto", "fd": "k", "data_from": "req", "flags": ["MSG_NOSIGNAL"]},
            {"op": "close", "fd": "k"},
        ], connections=[(8080, [GET_STYLE])]), {"numbers", "flags", "structs"}),
        E(_scenario("getcwd-range", [
            {"op": "getcwd", "size": 2},
            {"op": "getcwd", "size": 64},
            {"op": "open", "path": "README", "as": "r"},
            {"op": "read", "fd": "r", "count": 100},
            {"op": "close", "fd": "r"},
        ]), {"numbers", "flags"}),
        E(_scenario("arm-leader-mixed", [
            {"op": "open", "path": "/app/etc/app.conf", "as": "c"},
            {"op": "fstat", "fd": "c"},
            {"op": "read", "fd": "c", "count": 32},
            {"op": "close", "fd": "c"},
            {"op": "gettimeofday"},
            {"op": "getpid"}, {"op": "getpid"},
            {"op": "open", "path": "/app/var/arm.log", "flags": ["WRONLY", "CREAT"], "as": "l"},
            {"op": "write", "fd": "l", "data": "arm leads"},
            {"op": "close", "fd": "l"},
        ], leader="arm", x86_open=True), {"numbers", "flags", "structs", "open"}),
        E(_scenario("indirect-dispatch", [
            {"op": "open", "path": "/app/www/style.css", "as": "f"},
            {"op": "indirect_call", "pointer": "handler"},
            {"op": "read", "fd": "f", "count": 64, "as": "css"},
            {"op": "write", "fd": 1, "data_from": "css"},
            {"op": "close", "fd": "f"},
        ], extra={"variant": [
            {"name": "x86", "platform": "x86_64", "code_pointers": {"handler": 0x401230},
             "gadget": [{"addr": 0x4012A0, "steps": [{"op": "unlinkat", "path": "/app/www/index.html"}]}]},
            {"name": "arm", "platform": "armv7_eabi", "code_pointers": {"handler": 0x10570},
             "gadget": [{"addr": 0x105A4, "steps": [{"op": "unlinkat", "path": "/app/www/index.html"}]}]},
        ]}), {"numbers", "flags"}),
    ]
    return out


def message_law_program() -> ScenarioConfig:
    """Fifty calls touching every sensitivity and replication class."""
    steps = [
        {"op": "getpid"},                                                # 0 cold cache
        {"op": "getpid"},                                                # 1 warm
        {"op": "getppid"},                                               # 2 cold
        {"op": "getppid"},                                               # 3 warm
        {"op": "sched_yield"},                                           # 4 None/local
        {"op": "getuid"},                                                # 5 None/replicated
        {"op": "open", "path": "/app/etc/app.conf", "as": "c"},          # 6 High/local (static)
        {"op": "read", "fd": "c", "count": 10},                          # 7 Moderate, PFA local
        {"op": "read", "fd": "c", "count": 10},                          # 8
        {"op": "fstat", "fd": "c"},                                      # 9 Moderate, PFA local
        {"op": "lseek", "fd": "c", "offset": 0, "whence": 0},            # 10 Moderate, PFA local
        {"op": "read", "fd": "c", "count": 100},                         # 11
        {"op": "close", "fd": "c"},                                      # 12 Moderate/local (static)
        {"op": "getcwd"},                                                # 13 None, local under PFA
        {"op": "gettimeofday"},                                          # 14 None/replicated
        {"op": "clock_gettime"},                                         # 15
        {"op": "nanosleep", "nsec": 100},                                # 16 None/local
        {"op": "uname"},                                                 # 17 None/replicated
        {"op": "brk"},                                                   # 18 None/local
        {"op": "mmap", "length": 8192, "as": "m"},                       # 19 High/local
        {"op": "munmap", "addr_from": "m", "length": 8192},              # 20 Moderate/local
        {"op": "open", "path": "/app/var/law.log", "flags": ["WRONLY", "CREAT"], "as": "w"},  # 21 High/replicated
        {"op": "write", "fd": "w", "data": "one"},                       # 22 High/replicated
        {"op": "write", "fd": "w", "data": "two"},                       # 23
        {"op": "fstat", "fd": "w"},                                      # 24 Moderate/replicated
        {"op": "lseek", "fd": "w", "offset": 0, "whence": 0},            # 25 Moderate/replicated
        {"op": "close", "fd": "w"},                                      # 26 Moderate/replicated
        {"op": "open", "path": "/app/var/law.log", "as": "r"},           # 27 written: replicated
        {"op": "read", "fd": "r", "count": 6},                           # 28 Moderate/replicated
        {"op": "close", "fd": "r"},                                      # 29
        {"op": "socket", "as": "s"},                                     # 30 High/replicated
        {"op": "bind", "fd": "s", "port": 8080},                         # 31
        {"op": "listen", "fd": "s"},                                     # 32
        {"op": "accept", "fd": "s", "as": "k"},                          # 33
        {"op": "recvfrom", "fd": "k", "count": 64, "as": "q"},           # 34 Moderate/replicated
        {"op": "sendto", "fd": "k", "data_from": "q"},                   # 35 High/replicated
        {"op": "dup", "fd": "k", "as": "k2"},                            # 36 Moderate/replicated
        {"op": "close", "fd": "k2"},                                     # 37
        {"op": "close", "fd": "k"},                                      # 38
        {"op": "mkdirat", "path": "/app/var/d"},                         # 39 High/replicated
        {"op": "getpid"},                                                # 40 warm
        {"op": "sched_yield"},                                           # 41
        {"op": "open", "path": "/app/www/index.html", "as": "i"},        # 42 static open
        {"op": "read", "fd": "i", "count": 4096},                        # 43
        {"op": "dup", "fd": "i", "as": "i2"},                            # 44 static dup: local
        {"op": "close", "fd": "i2"},                                     # 45
        {"op": "close", "fd": "i"},                                      # 46
        {"op": "getuid"},                                                # 47
        {"op": "getppid"},                                               # 48 warm
        {"op": "exit", "code": 0},                                       # 49 High/local
    ]
    assert len(steps) == 50
    return _scenario("message-law-50", steps, connections=[(8080, ["ping-payload-0123456789"])])


def static_read_benchmark(reads_per_file: int = 5) -> ScenarioConfig:
    steps = []
    for i, path in enumerate(["/app/etc/app.conf", "/app/www/index.html", "/app/data/records.bin"]):
        steps.append({"op": "open", "path": path, "as": f"f{i}"})
        steps += [{"op": "read", "fd": f"f{i}", "count": 16} for _ in range(reads_per_file)]
        steps.append({"op": "close", "fd": f"f{i}"})
    return _scenario("static-read-benchmark", steps)


def all_scenarios() -> list[ScenarioConfig]:
    return [e.config for e in benign_corpus()] + [message_law_program(), static_read_benchmark()]
