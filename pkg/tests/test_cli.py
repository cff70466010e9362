import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from scotkit.cli import main

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    return code, json.loads(out), err


def prob(name):
    return PROBLEMS / f"{name}.json"


@pytest.mark.parametrize("argv,code", [
    (("solve", "lq_minimal"), 0),
    (("solve", "nonlinear_small"), 0),
    (("adjoint", "nonlinear_small"), 0),
    (("grad-check", "nonlinear_small"), 0),
    (("kkt", "box_linear"), 0),
    (("calmness", "identity_box"), 0),
    (("calmness", "circles"), 1),
    (("regcheck", "lq_minimal"), 0),
    (("regcheck", "circles"), 1),
    (("qualcheck", "identity_box"), 0),
    (("cones", "circles"), 0),
    (("bridge", "lq_sde"), 0),
])
def test_command_exit_codes(capsys, argv, code):
    got, rep, err = run_json(capsys, argv[0], prob(argv[1]))
    assert got == code
    assert rep["command"] == argv[0]
    assert rep["passed"] == (code == 0)
    assert len(rep["input_digest"]) == 64
    assert rep["checks"], "every command reports at least one check"
    for c in rep["checks"]:
        assert {"name", "value", "bound", "passed", "tolerance", "provenance"} <= set(c)
        assert c["provenance"] in ("exact", "sampled", "estimated")
    assert argv[0] in err  # human-readable table on stderr


@pytest.mark.parametrize("argv,needle", [
    (("solve", prob("bad_variance")), "coordinate 1 (stage 1)"),
    (("solve", prob("bad_shape")), "params.Q: expected shape"),
    (("solve", prob("circles")), "does not accept"),
    (("calmness", prob("lq_minimal")), "does not accept"),
    (("solve", "/nonexistent/problem.json"), "No such file"),
])
def test_input_errors_exit_2(capsys, argv, needle):
    code, out, err = run(capsys, *argv)
    assert code == 2
    assert out == ""
    assert err.startswith("error: ") and needle in err


def test_example_circles(capsys):
    code, rep, _ = run_json(capsys, "example", "circles", "--rho", "0.1,0.01")
    assert code == 0
    ratios = {r["rho"]: r["ratio"] for r in rep["data"]["ratios"]}
    assert ratios[0.1] == pytest.approx(40, rel=0.1)
    assert ratios[0.01] == pytest.approx(400, rel=0.1)
    assert rep["data"]["calm"] is False
    flag = next(c for c in rep["checks"] if c["name"] == "calmness_failure_flagged")
    assert flag["passed"]


def test_example_brokate(capsys):
    code, rep, _ = run_json(capsys, "example", "brokate", "--n", "15")
    assert code == 0
    norms = rep["data"]["norms"]
    assert all(b > a for a, b in zip(norms, norms[1:]))
    assert norms[-1] > 1e3 and rep["data"]["norm_exceeds_1e3"]


def test_grad_check_accuracy(capsys):
    code, rep, _ = run_json(capsys, "grad-check", prob("nonlinear_small"))
    assert code == 0
    err = next(c for c in rep["checks"] if c["name"] == "fd_relative_error")
    assert err["value"] <= 1e-6


def test_tolerance_flag_can_fail_a_run(capsys):
    code, rep, _ = run_json(capsys, "grad-check", prob("nonlinear_small"), "--tol", "1e-14")
    assert code == 1
    assert not next(c for c in rep["checks"] if c["name"] == "fd_relative_error")["passed"]


def test_max_iter_flag(capsys):
    code, rep, _ = run_json(capsys, "solve", prob("nonlinear_small"), "--max-iter", "1")
    assert code == 1


def test_out_directory(capsys, tmp_path):
    code, rep, _ = run_json(capsys, "solve", prob("lq_minimal"), "--out", tmp_path)
    assert code == 0
    assert json.loads((tmp_path / "report.json").read_text())["checks"] == rep["checks"]
    rows = list(csv.DictReader((tmp_path / "checks.csv").open()))
    assert rows[0]["name"] == rep["checks"][0]["name"]
    log = list(csv.DictReader((tmp_path / "iterate_log.csv").open()))
    assert log[0]["iter"] == "0" and float(log[-1]["kkt"]) <= 1e-8


def test_adjoint_dump(capsys, tmp_path):
    code, _, _ = run(capsys, "adjoint", prob("lq_minimal"), "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "adjoint.csv").open()))
    assert {r["kind"] for r in rows} == {"p", "q"}
    assert all("np." not in r["value"] for r in rows)
    float(rows[0]["value"])


def test_csv_format(capsys):
    code, out, _ = run(capsys, "cones", prob("circles"), "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows and set(rows[0]) >= {"name", "value", "passed"}


def test_seed_is_recorded_and_overridable(capsys):
    _, rep, _ = run_json(capsys, "calmness", prob("identity_box"), "--seed", "9")
    assert rep["seed"] == 9


def test_report_is_deterministic(capsys):
    reps = []
    for _ in range(2):
        _, out, _ = run(capsys, "regcheck", prob("identity_box"), "--seed", "3")
        rep = json.loads(out)
        rep.pop("wall_time")
        reps.append(json.dumps(rep, sort_keys=True))
    assert reps[0] == reps[1]


def test_console_script_and_thread_cap(tmp_path):
    env = dict(os.environ, SCOTKIT_THREADS="1")
    env.pop("OMP_NUM_THREADS", None)
    proc = subprocess.run(
        [sys.executable, "-c",
         "import os, sys; from scotkit.cli import main; rc = main(sys.argv[1:]); "
         "print(os.environ['OMP_NUM_THREADS'], file=sys.stderr); sys.exit(rc)",
         "solve", str(prob("lq_minimal"))],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["passed"]
    assert proc.stderr.strip().endswith("1")
