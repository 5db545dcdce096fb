from __future__ import annotations

import subprocess
import sys

import pytest

from reverb.cli import main
from reverb.harness import PROGRAMS_DIR

EX1 = str(PROGRAMS_DIR / "example1.rvb")
EX2 = str(PROGRAMS_DIR / "example2.rvb")
EX3 = str(PROGRAMS_DIR / "example3.rvb")


@pytest.fixture
def write(tmp_path):
    def _write(name: str, text: str) -> str:
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return _write


def test_run_writes_trace_and_verify_passes(tmp_path, capsys):
    out = tmp_path / "t.trace"
    assert main(["run", EX3, "--max-steps=30", f"--out={out}"]) == 0
    assert out.read_text().startswith("#reverb-trace\t1\n")
    assert main(["verify", str(out)]) == 0
    assert "soundness\tpass" in capsys.readouterr().out


def test_run_to_stdout_with_script(capsys):
    script = str(PROGRAMS_DIR / "example1.script")
    assert main(["run", EX1, "--semantics=standard", f"--policy=script:{script}"]) == 0
    assert "0\tspawn\tp1\t-\tp1,spawn(p2)\tp2" in capsys.readouterr().out


def test_same_inputs_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for path in (a, b):
        main(["run", EX2, "--policy=random", "--seed=4", "--max-steps=50", "--snapshots", f"--out={path}"])
    assert a.read_bytes() == b.read_bytes()


def test_runtime_fault_exit_code(write, tmp_path):
    prog = write("f.rvb", "proc main:\n T = check\n commit(T)\n commit(T)\nend\n")
    out = tmp_path / "f.trace"
    assert main(["run", prog, f"--out={out}"]) == 3
    assert out.read_text().endswith("#status\truntime-fault\n")
    assert main(["verify", str(out)]) == 3


def test_explore_clean_and_report_file(tmp_path):
    report = tmp_path / "r.txt"
    assert main(["explore", EX3, "--depth=8", "--check=soundness,lemma", f"--report={report}"]) == 0
    assert "violations\tsoundness\t0" in report.read_text()


def test_explore_violation_exit_code(write, capsys):
    prog = write("bad.rvb", "proc main:\n W = spawn w\n T = check\n send W, T\nend\n"
                            "proc w:\n receive | X -> commit(X)\n end\nend\n")
    assert main(["explore", prog, "--depth=6", "--check=wellformed"]) == 1
    assert "counterexample\t0" in capsys.readouterr().out


def test_verify_divergence_exit_code(tmp_path, capsys):
    out = tmp_path / "t.trace"
    main(["run", EX2, "--max-steps=10", f"--out={out}"])
    out.write_text(out.read_text().replace("p1,spawn(p2)", "p1,spawn(p9)"))
    assert main(["verify", str(out)]) == 1
    assert "divergence at record 0" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["run", EX1, "--semantics=quantum"],
        ["run", EX2, "--semantics=standard"],
        ["run", EX1, "--policy=sometimes"],
        ["run", "/nonexistent/file.rvb"],
        ["explore", EX1, "--depth=-1"],
        ["explore", EX1, "--check=bogus"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == 2


def test_parse_error_exit_code(write, capsys):
    prog = write("p.rvb", "proc main:\n send\n")
    assert main(["run", prog]) == 2
    assert "parse error" in capsys.readouterr().err


def test_diverged_script_is_a_usage_error(write):
    script = write("s.txt", "send p1\n")
    assert main(["run", EX1, "--semantics=standard", f"--policy=script:{script}"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "reverb", "run", EX1, "--semantics=standard"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.endswith("#status\tfinal\n")
