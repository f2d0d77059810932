import io
import json

import pytest

from lbp.cli import main, parse_point, UserError
from lbp.syntax import alpha_eq, parse, pretty
from lbp.typing import infer_open

SQUARE_SIN = "let z1 = sub(x1, x2) in let z2 = z1 * z1 in sin(z2)\n"


@pytest.fixture
def square_sin_file(tmp_path):
    p = tmp_path / "square_sin.lbp"
    p.write_text(SQUARE_SIN)
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_point():
    assert parse_point("x=1, y=-2.5") == {"x": 1.0, "y": -2.5}
    assert parse_point("") == {}
    for bad in ("x", "x=a", "x=1,x=2", "=3"):
        with pytest.raises(UserError):
            parse_point(bad)


def test_check(capsys, square_sin_file):
    assert run(capsys, "check", square_sin_file)[:2] == (0, "R\n")
    code, out, _ = run(capsys, "check", square_sin_file, "--format", "machine")
    assert json.loads(out) == {"type": "R", "size": 10, "ground": True}


def test_eval(capsys, square_sin_file):
    code, out, _ = run(capsys, "--format", "machine", "eval", square_sin_file, "--at", "x1=5,x2=2")
    assert code == 0
    assert json.loads(out)["value"] == pytest.approx(0.4121184852417566)


@pytest.mark.parametrize("mode", ["rev", "fwd", "bp", "bp_numeric", "fd"])
def test_grad_every_mode(capsys, square_sin_file, mode):
    code, out, _ = run(capsys, "grad", square_sin_file, "--at", "x1=5,x2=2", "--mode", mode, "--report")
    assert code == 0
    rep = json.loads(out)
    assert rep["value"] == pytest.approx(0.4121184852417566)
    assert rep["gradient"] == pytest.approx([-5.466781571308061, 5.466781571308061], rel=1e-7)


def test_grad_text(capsys, square_sin_file):
    code, out, _ = run(capsys, "grad", square_sin_file, "--at", "x1=5,x2=2")
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("value 0.41211848")
    assert lines[1].startswith("gradient (-5.46678")


def test_report_fields(capsys, square_sin_file):
    _, out, _ = run(capsys, "grad", square_sin_file, "--at", "x1=5,x2=2", "--report")
    rep = json.loads(out)
    assert list(rep) == ["value", "gradient", "steps", "m", "sizeG", "fallback"]
    assert list(rep["steps"]) == ["beta", "ell", "fn", "structural"]


def test_machine_output_is_stable(capsys, square_sin_file):
    first = run(capsys, "--format", "machine", "grad", square_sin_file, "--at", "x1=5,x2=2")[1]
    second = run(capsys, "--format", "machine", "grad", square_sin_file, "--at", "x1=5,x2=2")[1]
    assert first == second


def test_user_errors(capsys, square_sin_file, tmp_path):
    assert run(capsys, "grad", square_sin_file, "--at", "x1=5")[0] == 1
    code, _, err = run(capsys, "grad", square_sin_file, "--at", "x1=5,x2=2,x3=1")
    assert code == 1 and "x3" in err
    lam = tmp_path / "lam.lbp"
    lam.write_text("\\x. x")
    assert run(capsys, "grad", str(lam))[0] == 1
    bad = tmp_path / "bad.lbp"
    bad.write_text("let x = in x")
    assert run(capsys, "check", str(bad))[0] == 1
    assert run(capsys, "check", str(tmp_path / "missing.lbp"))[0] == 1
    assert run(capsys, "frobnicate")[0] == 1


def test_fuel_exhaustion_is_a_user_error(capsys, square_sin_file):
    assert run(capsys, "--fuel", "2", "grad", square_sin_file, "--at", "x1=5,x2=2")[0] == 1


@pytest.mark.parametrize("mode", ["rev", "fwd", "bp"])
def test_transform_emit_round_trips(capsys, square_sin_file, mode):
    code, out, _ = run(capsys, "transform", square_sin_file, "--mode", mode, "--emit")
    assert code == 0
    t = parse(out)
    assert alpha_eq(parse(pretty(t)), t)
    if mode == "bp":
        infer_open(t)


@pytest.fixture
def closed_file(tmp_path):
    p = tmp_path / "closed.lbp"
    p.write_text("(\\x. x * 2) 3")
    return str(p)


@pytest.mark.parametrize("strategy", ["eager", "lo"])
def test_trace(capsys, closed_file, strategy):
    code, out, _ = run(capsys, "trace", closed_file, "--strategy", strategy)
    lines = out.splitlines()
    assert code == 0 and lines
    assert all(line.startswith("[R") for line in lines)
    assert lines[-1].endswith("] 6")


def test_trace_stops_at_max_steps(capsys, closed_file):
    code, out, err = run(capsys, "trace", closed_file, "--max-steps", "1")
    assert code == 0 and len(out.splitlines()) == 1
    assert "stopped after 1 steps" in err


def test_trace_rejects_bottom_up(capsys, square_sin_file):
    assert run(capsys, "trace", square_sin_file, "--strategy", "bottom_up")[0] == 1


def test_stdin(capsys, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO(SQUARE_SIN))
    assert run(capsys, "check", "-")[:2] == (0, "R\n")


def test_validate_rnn(capsys):
    code, out, _ = run(capsys, "validate", "--suite", "rnn")
    assert code == 0
    assert json.loads(out)["passed"] is True
    assert run(capsys, "validate", "--suite", "nope")[0] == 1
