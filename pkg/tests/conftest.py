import math

import pytest

from dynauction.allocation import InterimMechanism, objective_value
from dynauction.solver import MarketParams, solve_thresholds
from dynauction.steady import solve_stationary
from dynauction.valuedist import make_power, make_uniform


@pytest.fixture(scope="session")
def uniform():
    return make_uniform()


@pytest.fixture(scope="session")
def power2():
    return make_power(2.0)


@pytest.fixture(scope="session")
def fig_params():
    return MarketParams(lam=2.0, mu=1.0, c=0.3, d=math.inf)


@pytest.fixture(scope="session")
def fig_solution(uniform, fig_params):
    th = solve_thresholds(uniform, fig_params)
    sd = solve_stationary(uniform, fig_params, th)
    return th, sd, InterimMechanism(sd), objective_value(uniform, fig_params, sd)


@pytest.fixture(scope="session")
def platform_params():
    return MarketParams(lam=1.0, mu=1.0, c=0.1, d=1e-3)


@pytest.fixture(scope="session")
def platform_solution(uniform, platform_params):
    th = solve_thresholds(uniform, platform_params)
    sd = solve_stationary(uniform, platform_params, th)
    return th, sd, InterimMechanism(sd), objective_value(uniform, platform_params, sd)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Criterion number -> (passed, title, detail), reported after the run."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
