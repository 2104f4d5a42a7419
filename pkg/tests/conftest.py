import math

import numpy as np
import pytest
from hypothesis import strategies as st

from fallingballs.dynamics import MassTriple, PhaseState, Side, random_orbit, random_state

WIDE = MassTriple(4.0, (-5.0 + math.sqrt(73.0)) / 2.0, 1.0)
SMALL = MassTriple(4.0, 2.0, 1.0)


@st.composite
def mass_triples(draw):
    m3 = draw(st.floats(0.2, 5.0))
    r2 = draw(st.floats(1.05, 4.0))
    r1 = draw(st.floats(1.05, 4.0))
    return MassTriple(m3 * r2 * r1, m3 * r2, m3)


@st.composite
def shell_states(draw, masses=None):
    m = masses if masses is not None else draw(mass_triples())
    seed = draw(st.integers(0, 2**31 - 1))
    energy = draw(st.floats(0.5, 50.0))
    return m, random_state(m, energy, seed)


@pytest.fixture(scope="session")
def wide():
    return WIDE


@pytest.fixture(scope="session")
def small():
    return SMALL


@pytest.fixture(scope="session")
def wide_log():
    return random_orbit(WIDE, 5000, seed=7)


def state(q, v, masses, side=Side.POST, t=0.0):
    return PhaseState(np.asarray(q, float), np.asarray(v, float) * masses.array, t, side)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n].line())
