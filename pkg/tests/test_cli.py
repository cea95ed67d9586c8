"""CLI: exit codes, diagnostic format, golden traces."""
import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).parent.parent
CORPUS = ROOT / "corpus"
GOLDEN = Path(__file__).parent / "golden"

DIAG_RE = re.compile(
    r"^.+:\d+:\d+: error\[[a-z0-9-]+\]: .+$")


def _cli(*args: str, cwd=ROOT):
    return subprocess.run([sys.executable, "-m", "reggio.cli", *args],
                          cwd=cwd, capture_output=True, text=True)


def test_check_prints_main_type():
    p = _cli("check", "corpus/listing1.rgo")
    assert p.returncode == 0
    assert p.stdout.strip() == "mut Holder"


def test_check_type_error_exit_1_and_format():
    for name in ("store_reject_x.rgo", "store_reject_y.rgo"):
        p = _cli("check", f"corpus/{name}")
        assert p.returncode == 1
        assert DIAG_RE.match(p.stderr.strip()), p.stderr


def test_parse_error_exit_1():
    bad = CORPUS / ".." / "corpus"  # run against a scratch file instead
    p = subprocess.run([sys.executable, "-m", "reggio.cli", "check",
                        "/dev/stdin"], input="class class { }",
                       capture_output=True, text=True, cwd=ROOT)
    assert p.returncode == 1
    assert "error[parse]" in p.stderr
    del bad


def test_missing_file_exit_10():
    p = _cli("run", "corpus/no_such_file.rgo")
    assert p.returncode == 10


def test_run_exit_codes():
    cases = {
        "listing1.rgo": 0,
        "store_accept.rgo": 0,
        "reenter_open.rgo": 2,
    }
    for name, code in cases.items():
        p = _cli("run", name, cwd=CORPUS)
        assert p.returncode == code, (name, p.stderr)


def test_run_budget_exit_4(tmp_path):
    src = ("class A { }\n"
           "fn spin(a: mut A): mut A { let r = spin(a) in r }\n"
           "let x = new mut A() in let y = spin(x) in y")
    f = tmp_path / "spin.rgo"
    f.write_text(src)
    p = _cli("run", str(f), "--budget", "100")
    assert p.returncode == 4
    assert "Budget" in p.stderr


def test_run_buggy_machine_violation_exit_3():
    p = _cli("run", "corpus/deep_freeze.rgo", "--bugs", "shallow-freeze",
             "--invariant-check", "each-step")
    assert p.returncode == 3
    assert "Violation" in p.stderr


def test_run_unknown_bug_exit_10():
    p = _cli("run", "corpus/listing1.rgo", "--bugs", "bogus")
    assert p.returncode == 10


def test_trace_lines_are_json_with_expected_keys():
    p = _cli("trace", "corpus/deep_freeze.rgo", "--invariant-check",
             "each-step")
    assert p.returncode == 0
    lines = [json.loads(ln) for ln in p.stdout.splitlines()]
    assert lines
    for i, rec in enumerate(lines, 1):
        assert rec["step"] == i
        assert set(rec) == {"step", "effect", "args", "rs", "open",
                            "closed", "frozen", "verdict"}
        assert rec["verdict"] == "ok"


@pytest.mark.parametrize("name", [
    "listing1", "store_accept", "bridge_swap", "deep_freeze",
    "merge_nested", "explore", "reenter_open"])
def test_golden_traces(name):
    p = _cli("trace", f"corpus/{name}.rgo", "--invariant-check",
             "each-step")
    got = p.stdout + p.stderr
    assert got == (GOLDEN / f"{name}.trace").read_text()


@pytest.mark.parametrize("name", ["store_reject_x", "store_reject_y"])
def test_golden_diagnostics(name):
    p = _cli("check", f"corpus/{name}.rgo")
    got = p.stdout + p.stderr
    assert got == (GOLDEN / f"{name}.diag").read_text()


def test_fuzz_smoke(tmp_path):
    p = _cli("fuzz", "--seeds", "5", "--depth", "5",
             "--reproducer", str(tmp_path / "r.rgo"))
    assert p.returncode == 0
    assert "5 runs" in p.stdout
    assert "0 stuck, 0 violations" in p.stdout


def test_fuzz_buggy_machine_writes_reproducer(tmp_path):
    out = tmp_path / "repro.rgo"
    p = _cli("fuzz", "--seeds", "50", "--depth", "8",
             "--bugs", "shallow-freeze", "--reproducer", str(out))
    assert p.returncode == 3
    assert p.stdout.startswith("ABORT")
    assert out.exists()
