import numpy as np
import pytest
from hypothesis import strategies as st

from divprune.learners import PredictionMatrix


def random_case(rng, max_members=9, max_instances=50, uniform=False):
    """Random prediction matrix and nonnegative weights summing to one."""
    m = int(rng.integers(1, max_members + 1))
    n = int(rng.integers(1, max_instances + 1))
    values = rng.choice(np.array([-1, 1], dtype=np.int8), size=(m, n))
    labels = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    w = np.full(m, 1.0 / m) if uniform else rng.random(m) + 1e-3
    return PredictionMatrix(values, labels), w / w.sum()


@st.composite
def prediction_cases(draw, max_members=9, max_instances=30):
    m = draw(st.integers(1, max_members))
    n = draw(st.integers(1, max_instances))
    bits = st.sampled_from([-1, 1])
    values = np.array(draw(st.lists(st.lists(bits, min_size=n, max_size=n),
                                    min_size=m, max_size=m)), dtype=np.int8)
    labels = np.array(draw(st.lists(bits, min_size=n, max_size=n)), dtype=np.int8)
    raw = np.array(draw(st.lists(st.floats(0.01, 1.0), min_size=m, max_size=m)))
    return PredictionMatrix(values, labels), raw / raw.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, filled in by test_acceptance.py and echoed at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
