import time

import pytest

from lvopf.netmodel import reference_network
from lvopf.powerflow import solve_power_flow
from lvopf.scenarios import default_specs, run_study
from lvopf.ubopf import SolverOptions, Strategy, solve_opf, verify_solution

_criteria: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "setup" and rep.failed:
        _criteria[number] = (title, "FAIL", rep.duration)
    elif rep.when == "call":
        _criteria[number] = (title, "PASS" if rep.passed else "FAIL", rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, seconds = _criteria[number]
        terminalreporter.write_line(f"AC{number:<2d} {verdict}  {title}  ({seconds:.1f} s)")


@pytest.fixture(scope="session")
def ref_net():
    return reference_network()


@pytest.fixture(scope="session")
def ref_no_control(ref_net):
    return solve_power_flow(ref_net)


@pytest.fixture(scope="session")
def baseline(ref_net):
    """Verified P-only and P+Q solutions of the reference feeder, with solve times."""
    out = {}
    for strategy in (Strategy.ActiveOnly, Strategy.ActiveReactive):
        t0 = time.perf_counter()
        sol = solve_opf(ref_net, strategy, SolverOptions())
        elapsed = time.perf_counter() - t0
        out[strategy] = sol.with_verification(verify_solution(ref_net, sol))
        out[strategy, "seconds"] = elapsed
    return out


@pytest.fixture(scope="session")
def study(ref_net):
    t0 = time.perf_counter()
    result = run_study(ref_net, default_specs(), SolverOptions(seed=0))
    return result, time.perf_counter() - t0
