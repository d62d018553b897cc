"""End-to-end tests for the command-line front end."""
from __future__ import annotations

import subprocess
import sys

import pytest

from netquery.cli import main
from netquery.fixtures import (
    ROUTING_TABLE_PROGRAM,
    SPANNING_TREE_TEXT,
    TRANSITIVE_CLOSURE_DATALOG,
)
from netquery.logic import parse_fixpoint, print_fixpoint, relativize_fixpoint
from netquery.oracle import path_graph, ring_graph
from netquery.simnet import network_text

TC1_TEXT = print_fixpoint(
    relativize_fixpoint(
        parse_fixpoint("mu T(x,y). G(x,y) | exists z. (T(x,z) & G(z,y))"), 1
    )
)


def run_cli(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def path3(tmp_path):
    p = tmp_path / "path3.net"
    p.write_text(network_text(path_graph(3).with_unary({"ReqNode": [1]})))
    return str(p)


@pytest.fixture
def ring4(tmp_path):
    p = tmp_path / "ring4.net"
    p.write_text(network_text(ring_graph(4)))
    return str(p)


def test_fixtures_stdout_and_files(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "fixtures", "path", "3")
    assert code == 0
    assert out == network_text(path_graph(3))
    code, out, _ = run_cli(
        capsys, "fixtures", "all", "3", "--out", str(tmp_path / "g")
    )
    assert code == 0
    written = list((tmp_path / "g").glob("*.net"))
    assert len(written) > 1 and "wrote" in out


def test_oracle_fo_table_and_csv(capsys, path3):
    code, out, _ = run_cli(
        capsys, "oracle-fo", "--net", path3, "--query", "exists y. G(x,y)"
    )
    assert code == 0
    assert "result: arity 1, 3 tuples" in out
    assert out.index("(1)") < out.index("(2)") < out.index("(3)")
    code, out, _ = run_cli(
        capsys,
        "oracle-fo",
        "--net",
        path3,
        "--query",
        "exists y. G(x,y)",
        "--format",
        "csv",
    )
    assert code == 0
    assert out.splitlines() == ["result,1", "result,2", "result,3"]


def test_oracle_fp_final_stage(capsys, path3):
    code, out, _ = run_cli(
        capsys,
        "oracle-fp",
        "--net",
        path3,
        "--query",
        "mu T(x,y). G(x,y) | exists z. (T(x,z) & G(z,y))",
    )
    assert code == 0
    assert "arity 2, 9 tuples" in out


def test_qe_fo_report_sections_and_determinism(capsys, path3):
    argv = (
        "qe-fo", "--net", path3, "--query", "exists y. G(x,y)",
        "--req", "1",
    )
    code, first, _ = run_cli(capsys, *argv)
    assert code == 0
    for needle in (
        "result:", "placement:", "IN-TIME/ROUND", "DIST-TIME",
        "MSG-SIZE", "#MSG/NODE[1]",
    ):
        assert needle in first
    assert first.index("IN-TIME/ROUND") < first.index("DIST-TIME")
    assert first.index("DIST-TIME") < first.index("MSG-SIZE")
    assert first.index("MSG-SIZE") < first.index("#MSG/NODE[1]")
    code, second, _ = run_cli(capsys, *argv)
    assert code == 0 and second == first


def test_qe_fo_check_passes(capsys, path3):
    code, out, _ = run_cli(
        capsys,
        "qe-fo", "--net", path3, "--query", "exists y. G(x,y)",
        "--req", "2", "--check",
    )
    assert code == 0 and "CHECK OK" in out


def test_qe_fp_check_passes(capsys, path3, tmp_path):
    q = tmp_path / "span.q"
    q.write_text(SPANNING_TREE_TEXT)
    code, out, _ = run_cli(
        capsys,
        "qe-fp", "--net", path3, "--query", str(q), "--req", "1", "--check",
    )
    assert code == 0 and "CHECK OK" in out
    assert "(1,2)" in out and "(2,3)" in out


def test_qe_fo_loc_all_identity_modes(capsys, ring4, tmp_path):
    labels = tmp_path / "ring4.labels"
    labels.write_text("1 10\n2 20\n3 30\n4 40\n")
    base = (
        "qe-fo-loc", "--net", ring4, "--query",
        "exists y in N^1(x). G(x,y)", "--req", "1", "--check",
    )
    for extra in (
        (),
        ("--identity", "anonymous"),
        ("--identity", "local-consistent:1", "--labels", str(labels)),
    ):
        code, out, _ = run_cli(capsys, *base, *extra)
        assert code == 0 and "CHECK OK" in out, extra


def test_qe_fp_loc_anonymous_check(capsys, ring4):
    code, out, _ = run_cli(
        capsys,
        "qe-fp-loc", "--net", ring4, "--query", TC1_TEXT,
        "--req", "2", "--identity", "anonymous", "--check",
    )
    assert code == 0 and "CHECK OK" in out
    assert "arity 2, 12 tuples" in out


def test_netlog_run_facts_and_check(capsys, ring4, tmp_path):
    prog = tmp_path / "rt.nl"
    prog.write_text(ROUTING_TABLE_PROGRAM)
    code, out, _ = run_cli(
        capsys,
        "netlog-run", "--net", ring4, "--query", str(prog), "--check",
    )
    assert code == 0 and "CHECK OK" in out
    assert "facts:" in out and "placement:" in out and "DIST-TIME" in out


def test_datalog_run_final_facts(capsys, path3, tmp_path):
    prog = tmp_path / "tc.dl"
    prog.write_text(TRANSITIVE_CLOSURE_DATALOG)
    code, out, _ = run_cli(
        capsys, "datalog-run", "--net", path3, "--query", str(prog)
    )
    assert code == 0
    assert "T(1,3)" in out and "T(3,1)" in out


def test_compile_emits_header_and_delta_default(capsys, path3, tmp_path):
    prog = tmp_path / "tc.dl"
    prog.write_text(TRANSITIVE_CLOSURE_DATALOG)
    code, out, _ = run_cli(
        capsys, "compile", "--query", str(prog), "--delta", "2"
    )
    assert code == 0
    assert out.splitlines()[0] == "% kappa=2 delta=2"
    code, out, _ = run_cli(capsys, "compile", "--query", str(prog),
                           "--net", path3)
    assert code == 0
    assert out.splitlines()[0] == "% kappa=2 delta=2"


def test_check_consistent_yes_and_no(capsys, ring4, tmp_path):
    good = tmp_path / "good.labels"
    good.write_text("1 10\n2 20\n3 30\n4 40\n")
    code, out, _ = run_cli(
        capsys, "check-consistent", "--net", ring4, "--labels", str(good),
        "--radius", "1",
    )
    assert code == 0 and "yes" in out
    bad = tmp_path / "bad.labels"
    bad.write_text("1 10\n2 10\n3 30\n4 40\n")
    code, out, _ = run_cli(
        capsys, "check-consistent", "--net", ring4, "--labels", str(bad),
        "--radius", "1",
    )
    assert code == 1 and "no" in out


def test_parse_error_is_position_tagged(capsys, path3):
    code, _, err = run_cli(
        capsys, "oracle-fo", "--net", path3, "--query", "exists y. G(x,"
    )
    assert code == 2
    assert "error:" in err and "line 1" in err


def test_missing_required_flags(capsys, path3):
    code, _, err = run_cli(
        capsys, "qe-fo", "--net", path3, "--query", "exists y. G(x,y)"
    )
    assert code == 2 and "--req" in err
    code, _, err = run_cli(capsys, "oracle-fo", "--query", "G(x,y)")
    assert code == 2 and "--net" in err


def test_bad_requester_rejected(capsys, path3):
    code, _, err = run_cli(
        capsys,
        "qe-fo", "--net", path3, "--query", "exists y. G(x,y)",
        "--req", "9",
    )
    assert code == 2 and "requester" in err


def test_module_invocation_subprocess(path3):
    proc = subprocess.run(
        [
            sys.executable, "-m", "netquery.cli",
            "oracle-fo", "--net", path3, "--query", "exists y. G(x,y)",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "3 tuples" in proc.stdout
