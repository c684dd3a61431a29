import json
import socket
import subprocess
import sys

import pytest

from conftest import REPO
from nvxsim.cli import EXIT_DIVERGED, EXIT_ERROR, EXIT_OK, main

SCEN = REPO / "scenarios"
GAD = SCEN / "gadgets"


def test_clean_run_exits_zero(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["run", "--config", str(SCEN / "web.toml"), "--report", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["status"] == "ok" and rep["incident"] is None
    assert "follower arm" in capsys.readouterr().out


def test_fault_run_exits_two(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", "--config", str(SCEN / "web_fault.toml"), "--report", str(out)]) == EXIT_DIVERGED
    assert json.loads(out.read_text())["incident"]


def test_tcp_and_flags(capsys):
    rc = main(["run", "--config", str(SCEN / "files.toml"), "--transport", "tcp", "--pfa", "off", "--acc", "off"])
    assert rc == EXIT_OK
    assert "transport=tcp pfa=off acc=off" in capsys.readouterr().out


def test_missing_config_exits_one(capsys):
    assert main(["run", "--config", "does/not/exist.toml"]) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


def test_bad_switch_value():
    with pytest.raises(SystemExit):
        main(["run", "--config", str(SCEN / "web.toml"), "--pfa", "maybe"])


def test_gadgets_subcommand(tmp_path, capsys):
    out = tmp_path / "g.json"
    args = ["gadgets", "--ptrs-a", str(GAD / "x86_64.ptrs"), "--gadgets-a", str(GAD / "x86_64.gadgets"),
            "--ptrs-b", str(GAD / "armv7_eabi.ptrs"), "--gadgets-b", str(GAD / "armv7_eabi.gadgets"),
            "--platform-a", "x86_64", "--platform-b", "armv7_eabi", "--report", str(out)]
    assert main(args) == EXIT_OK
    d = json.loads(out.read_text())
    assert (d["reachable_a"], d["surviving_a"]) == (21, 15)
    assert main(args[:-2] + ["--strategy", "partial"]) == EXIT_OK
    assert "strategy partial" in capsys.readouterr().out


def test_structdiff_subcommand(capsys):
    rc = main(["structdiff", "--defs", str(REPO / "tests" / "fixtures" / "structs30.toml"),
               "--abi-a", "x86_64", "--abi-b", "armv7_eabi"])
    assert rc == EXIT_OK
    assert capsys.readouterr().out.startswith("14 of 30 structs differ")


def test_unknown_abi_exits_one():
    assert main(["structdiff", "--defs", str(REPO / "tests" / "fixtures" / "structs30.toml"),
                 "--abi-a", "x86_64", "--abi-b", "pdp11"]) == EXIT_ERROR


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_daemon_pair_over_tcp(tmp_path):
    cfg = (SCEN / "daemon.toml").read_text()
    cfg = cfg.replace("tcp://127.0.0.1:47311", f"tcp://127.0.0.1:{_free_port()}")
    cfg = cfg.replace('program = "programs/files.toml"', f'program = "{SCEN / "programs" / "files.toml"}"')
    path = tmp_path / "daemon.toml"
    path.write_text(cfg)

    def start(variant):
        return subprocess.Popen([sys.executable, "-m", "nvxsim.cli", "daemon", "--config", str(path),
                                 "--variant", variant, "--report", str(tmp_path / f"{variant}.json")],
                                stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)

    leader = start("x86")
    follower = start("arm")
    out_f, _ = follower.communicate(timeout=60)
    out_l, _ = leader.communicate(timeout=60)
    assert leader.returncode == 0, out_l
    assert follower.returncode == 0, out_f
    lead = json.loads((tmp_path / "x86.json").read_text())
    assert lead["status"] == "ok"
    assert lead["ledger"]
