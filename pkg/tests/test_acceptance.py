"""End-to-end acceptance checks, one test per criterion, at full size.

Each test asserts its own time budget.  The terminal summary prints one
PASS/FAIL line per criterion.
"""

import json
import random
import time

import pytest

from lbp.cli import main
from lbp.graphad import bp_transform
from lbp.revad import RevConfig, gradient
from lbp.rewrite import canonical, reduce_to_graph
from lbp.syntax import alpha_eq, size
from lbp.validate import (
    agree_vec,
    church_poly,
    complexity_suite,
    commutation_suite,
    compare_routes,
    conditioned_ground,
    conditioned_points,
    extrapolated_diff,
    square_sin,
    square_sin_backprop,
    metatheory_suite,
    random_combinator,
    rnn_suite,
    shared,
)

SQUARE_SIN = "let z1 = sub(x1, x2) in let z2 = z1 * z1 in sin(z2)\n"


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


@pytest.mark.criterion(1, "two-input example: value and gradient through grad --mode rev")
def test_square_sin_reproduction(tmp_path, capsys):
    path = tmp_path / "square_sin.lbp"
    path.write_text(SQUARE_SIN)
    with Timer() as clock:
        code = main(["grad", str(path), "--at", "x1=5,x2=2", "--mode", "rev", "--report"])
    rep = json.loads(capsys.readouterr().out)
    assert code == 0
    assert abs(rep["value"] - 0.412) <= 5e-4
    assert abs(rep["gradient"][0] + 5.467) <= 1e-3
    assert abs(rep["gradient"][1] - 5.467) <= 1e-3
    assert clock.seconds < 1.0


@pytest.mark.criterion(2, "backpropagation term of the two-input example matches the golden term")
def test_backprop_golden():
    with Timer() as clock:
        g, _ = reduce_to_graph(square_sin())
        bp = bp_transform(g, ["x1", "x2"]).assemble()
        same = alpha_eq(canonical(bp), canonical(square_sin_backprop()))
    assert same
    assert clock.seconds < 1.0


@pytest.mark.criterion(3, "four routes agree on 200 random ground terms at 5 points")
def test_oracle_quadrangle():
    gen = random.Random(1)
    failures = []
    checked = 0
    with Timer() as clock:
        for i in range(200):
            g, pts = conditioned_ground(gen, 5)
            assert size(g) <= 200
            for p in pts:
                r = compare_routes(g, p, rel=1e-5)
                checked += 1
                if not r.ok:
                    failures.append((i, p, r))
    assert checked == 1000
    assert not failures, failures[:3]
    assert clock.seconds < 60.0


@pytest.mark.criterion(4, "reverse gradients of 100 combinator terms match finite differences")
def test_higher_order_soundness():
    gen = random.Random(2)
    failures = []
    with Timer() as clock:
        for i in range(100):
            t = random_combinator(gen)
            (p,) = conditioned_points(gen, t, 1)
            rev, _ = gradient(t, p)
            fd = extrapolated_diff(t, p)
            if not agree_vec(rev, fd, 1e-5):
                failures.append((i, p, rev, fd))
    assert not failures, failures[:3]
    assert clock.seconds < 120.0


@pytest.mark.criterion(5, "Church polynomial gradient at (3, 2) is exactly (14, 13)")
def test_church_polynomial():
    with Timer() as clock:
        grad, _ = gradient(church_poly(), [3.0, 2.0])
    assert grad == [14.0, 13.0]
    assert clock.seconds < 1.0


@pytest.mark.criterion(6, "RNN gradients match the recurrence and finite differences for n = 1..8")
def test_rnn():
    res = rnn_suite(0, max_len=8)
    assert res.passed, res.failures
    assert len(res.checks) == 8
    assert res.seconds < 10.0


@pytest.mark.criterion(7, "step totals are linear in m + |G|; forward sweep ratio grows past 5")
def test_complexity():
    res = complexity_suite(0)
    assert res.passed, res.failures
    assert res.checks["chain_fit"]["residual"] < 0.10
    assert res.checks["sweep_ratios"][64] > 5
    assert res.seconds < 60.0


@pytest.mark.criterion(8, "metatheory properties on 500 non-vacuous instances each")
def test_metatheory():
    res = metatheory_suite(0, instances=500)
    print(json.dumps(res.as_dict(), default=str))
    for name, c in res.checks.items():
        assert c["instances"] >= 500, name
    assert res.passed, res.failures[:5]
    assert res.seconds < 120.0


@pytest.mark.criterion(9, "linear factoring performs fewer duplications with equal gradients")
def test_linear_factoring():
    with Timer() as clock:
        for k in range(2, 11):
            on, rep_on = gradient(shared(k), [0.3, 0.1])
            off, rep_off = gradient(shared(k), [0.3, 0.1], RevConfig().without_factoring())
            assert agree_vec(on, off, 1e-9, 1e-12), k
            assert rep_on.duplications < rep_off.duplications, k
    assert clock.seconds < 10.0


@pytest.mark.criterion(10, "reverse images of 500 source steps reconnect within 10 steps")
def test_commutation():
    res = commutation_suite(0, instances=500, max_steps=10)
    print(json.dumps(res.checks))
    assert res.checks["instances"] == 500
    assert res.passed, res.checks["by_rule"]
    assert res.seconds < 60.0
