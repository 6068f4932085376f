import numpy as np
import pytest

from meroexp import reconstruction as rc
from meroexp.meromorphic_analysis import PoleSet
from meroexp.pipeline import ExperimentConfig, run, solve_run

REGRESSION_SEEDS = tuple(range(1, 11))

_LINES = []


@pytest.fixture(scope="session")
def acceptance_line():
    """Record one PASS/FAIL line; echoed in the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def default_report(default_config):
    return run(default_config)


@pytest.fixture(scope="session")
def default_solved(default_report):
    return default_report["_run"]


@pytest.fixture(scope="session")
def regression_runs():
    """Solve, pole set and frequency set for each regression seed."""
    out = {}
    for seed in REGRESSION_SEEDS:
        r = solve_run(ExperimentConfig(seed=seed, growth_compare=False))
        P = PoleSet.from_kernel_sum(r.F)
        L = rc.build_lambda(r.F, r.partition)
        out[seed] = {"run": r, "poles": P, "lambda": L}
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
