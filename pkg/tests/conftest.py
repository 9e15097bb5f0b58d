import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from votingq.votecore import UtilityProfile

P3 = [[3, 2, 1], [3, 2, 1], [1, 2, 3]]


@pytest.fixture
def p3():
    return UtilityProfile(np.array(P3, dtype=float))


def profiles(max_voters=6, max_candidates=6, integer=False):
    """Utility profiles; integer entries make ties common."""

    @st.composite
    def build(draw):
        k = draw(st.integers(1, max_voters))
        m = draw(st.integers(1, max_candidates))
        if integer:
            elems = st.integers(-3, 3).map(float)
        else:
            elems = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
        return UtilityProfile(draw(arrays(np.float64, (k, m), elements=elems)))

    return build()


def random_profile(rng, k, m, ties=False):
    u = rng.integers(0, 4, size=(k, m)).astype(float) if ties else rng.normal(size=(k, m))
    return UtilityProfile(u)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
