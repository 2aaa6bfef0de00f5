import io
import json
import subprocess
import sys

import pytest

from hamcheck.cli import main

KDV = "D^3 + u_0*D + 1/2*u_1"


def run(*argv, stdin=None):
    out, err = io.StringIO(), io.StringIO()
    old = sys.stdin
    if stdin is not None:
        sys.stdin = io.StringIO(stdin)
    try:
        rc = main(list(argv), stdout=out, stderr=err)
    finally:
        sys.stdin = old
    return rc, out.getvalue(), err.getvalue()


class TestCheck:
    def test_hamiltonian(self):
        rc, out, _ = run("check", KDV, "--json")
        assert rc == 0
        report = json.loads(out)
        assert report["hamiltonian"] is True and report["skew"] is True
        assert report["entries"] == [] and report["defect"] == []

    def test_counterexample(self):
        rc, out, _ = run("check", "u_1*D + 1/2*u_2", "--json")
        assert rc == 1
        entries = json.loads(out)["entries"]
        assert {"alpha": 0, "beta": 0, "gamma": 0, "k": [0], "l": [3], "expr": "-u_1"} in entries

    def test_text_output(self):
        rc, out, _ = run("check", "u_1*D + 1/2*u_2")
        assert rc == 1
        assert "hamiltonian: false" in out and "Q[0,3] = -u_1" in out

    def test_not_skew(self):
        rc, out, _ = run("check", "D^2")
        assert rc == 1
        assert "skew-adjoint: false" in out and "defect: (2)*D^2" in out

    def test_fast_path(self):
        rc, out, _ = run("check", "u_1*D + 1/2*u_2", "--fast-path", "--json")
        assert rc == 1 and json.loads(out)["hamiltonian"] is False

    def test_scatter_cap(self):
        rc, _, err = run("check", "u_1*D + 1/2*u_2", "--max-order", "0")
        assert rc == 2 and json.loads(err)["error"] == "scatter_limit"

    def test_supports_in_report(self):
        rc, out, _ = run("check", "u_1*D + 1/2*u_2", "--json")
        sup = json.loads(out)["supports"]
        assert [0, 3] in sup["Q"]


class TestOtherCommands:
    def test_q(self):
        rc, out, _ = run("q", "u_1*D + 1/2*u_2")
        assert rc == 0 and "Q[0,3] = -u_1" in out
        rc, out, _ = run("q", "D")
        assert rc == 0 and out == "Q = 0\n"

    def test_adjoint(self):
        rc, out, _ = run("adjoint", "u_0*D")
        assert rc == 0 and out == "(-u_1) + (-u_0)*D\n"
        rc, out, _ = run("adjoint", "u_0*D", "--json")
        assert json.loads(out)["adjoint"] == [
            {"row": 0, "col": 0, "i": [0], "coeff": "-u_1"},
            {"row": 0, "col": 0, "i": [1], "coeff": "-u_0"},
        ]

    def test_euler(self):
        rc, out, _ = run("euler", "-e", "1/2*u_1^2")
        assert rc == 0 and out == "-u_2\n"
        rc, out, _ = run("euler", "depvars=u,v\nu_0*v_1", "--json")
        assert json.loads(out) == {"euler": {"u": "v_1", "v": "-u_1"}}

    def test_oracle(self):
        rc, out, _ = run("oracle", "D", "--seed", "3", "--trials", "2", "--json")
        assert rc == 0 and json.loads(out) == {"seed": 3, "trials": 2, "residuals": ["0", "0"]}
        rc, out, _ = run("oracle", "u_1*D + 1/2*u_2", "--trials", "3")
        assert rc == 0 and out.startswith("seed 0, 3 trials\n")

    def test_supports(self):
        rc, out, _ = run("supports", "u_1*D + 1/2*u_2", "--json")
        sup = json.loads(out)
        assert sup["R"] == [[0, 0], [0, 1], [1, 0], [1, 1], [2, 0], [2, 1], [3, 0]]
        rc, out, _ = run("supports", "u_1*D + 1/2*u_2")
        assert out.splitlines()[0] == "supp R: (0,0) (0,1) (1,0) (1,1) (2,0) (2,1) (3,0)"

    def test_stdin_and_file(self, tmp_path):
        rc, out, _ = run("check", "-", "--json", stdin=KDV)
        assert rc == 0
        f = tmp_path / "op.txt"
        f.write_text("m=1\n" + KDV + "\n", encoding="utf-8")
        rc, out2, _ = run("check", "-f", str(f), "--json")
        assert rc == 0 and out2 == out

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "session.cfg"
        cfg.write_text("depvars=u,v\n", encoding="utf-8")
        rc, out, _ = run("check", "[[0, D],[D, 0]]", "--config", str(cfg), "--json")
        assert rc == 0 and json.loads(out)["supports"] is None


class TestErrors:
    def test_syntax_error_json(self):
        rc, out, err = run("check", "u_0 +")
        assert rc == 2 and out == ""
        e = json.loads(err)
        assert e["error"] == "syntax" and (e["line"], e["column"]) == (1, 6) and e["expected"]

    def test_not_skew_for_q(self):
        rc, _, err = run("q", "u_0*D")
        e = json.loads(err)
        assert rc == 2 and e["error"] == "not_skew_adjoint"
        assert e["defect"] == [{"row": 0, "col": 0, "i": [0], "coeff": "-u_1"}]

    @pytest.mark.parametrize(
        "argv, kind",
        [
            (("oracle", "lam*D + 1/2*D(lam) where lam = f(u_1)"), "opaque_symbol"),
            (("oracle", "1/(u_0+1)*D - 1/2*u_1/(u_0+1)^2"), "non_constant_denominator"),
            (("check", "-f", "/nonexistent/op.txt"), "usage"),
            (("check",), "usage"),
            (("supports", "D1", "--config", "/nonexistent.cfg"), "usage"),
            (("check", "zz + D"), "unknown_symbol"),
        ],
    )
    def test_error_kinds(self, argv, kind):
        rc, _, err = run(*argv)
        assert rc == 2 and json.loads(err)["error"] == kind

    def test_bad_arguments(self):
        rc, _, _ = run("frobnicate")
        assert rc == 2


def test_reports_are_byte_identical():
    a = run("check", "u_1*D + 1/2*u_2", "--json")
    b = run("check", "u_1*D + 1/2*u_2", "--json")
    assert a == b
    assert a[1] == json.dumps(json.loads(a[1]), sort_keys=True, indent=2) + "\n"


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "hamcheck", "euler", "-e", "u_0*u_2"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0 and proc.stdout == "2*u_2\n"
