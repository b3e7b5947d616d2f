import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coagself.kernel import make_constant, make_power  # noqa: E402
from coagself.selfsim import builtin_seed, solve  # noqa: E402

ALPHA = 1.0 / 3.0


@functools.lru_cache(maxsize=None)
def _solve(eps: float, seed: str):
    k = make_power(eps, ALPHA) if eps > 0 else make_constant()
    return solve(k, builtin_seed(seed))


@pytest.fixture(scope="session")
def solution():
    """``solution(eps, seed)``: memoized solver run for ``power(eps, 1/3)`` (constant at 0)."""
    return _solve


@functools.lru_cache(maxsize=None)
def _constant_run():
    from coagself.dynamics import evolve, initial_state

    return evolve(make_constant(), initial_state(), 100.0, snapshots=(3.0, 10.0, 30.0))


@pytest.fixture(scope="session")
def constant_run():
    """Constant-kernel trajectory from ``e^{-xi}`` with states at 3, 10, 30 and 100."""
    return _constant_run()


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one ``PASS``/``FAIL`` line per acceptance criterion."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
