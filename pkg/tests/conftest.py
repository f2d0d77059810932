import random

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from lbp.syntax import REAL
from lbp.validate import SMALL_TYPES, SourceGen, close, random_ground

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

INPUTS = ("x1", "x2")
CTX = {x: REAL for x in INPUTS}

seeds = st.integers(min_value=0, max_value=2**31 - 1)


@st.composite
def source_terms(draw, ty=None, max_size=25):
    """Well-typed terms over x1, x2 : R, built by the seeded generator."""
    rng = random.Random(draw(seeds))
    ty = ty if ty is not None else rng.choice(SMALL_TYPES)
    return SourceGen(rng, INPUTS).term(ty, max_size)


@st.composite
def closed_terms(draw, ty=None):
    t = draw(source_terms(ty))
    x1 = draw(st.sampled_from([-1.5, -0.5, 0.5, 2.0]))
    x2 = draw(st.sampled_from([-1.0, 0.25, 1.0, 3.0]))
    return close(t, [x1, x2], INPUTS)


@st.composite
def ground_terms(draw, n_inputs=3):
    return random_ground(random.Random(draw(seeds)), n_inputs)


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n, title = mark.args
    _CRITERIA[n] = (title, call.excinfo is None, call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, secs = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'} {secs:7.2f}s  {title}")
