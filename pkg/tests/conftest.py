import functools
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import treeshape
from treeshape import irrigation, optimizer, scenario, selftest

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: list = []

# every irrigation_cost call made during the session, checked against the lower bound
IRRIGATION_CALLS = {"calls": 0, "worst": -np.inf}

_raw_irrigation_cost = irrigation.irrigation_cost


@functools.wraps(_raw_irrigation_cost)
def _recorded_irrigation_cost(*args, **kwargs):
    res = _raw_irrigation_cost(*args, **kwargs)
    IRRIGATION_CALLS["calls"] += 1
    excess = (res.lower_bound - res.cost) / max(1.0, res.lower_bound)
    IRRIGATION_CALLS["worst"] = max(IRRIGATION_CALLS["worst"], excess)
    return res


for _mod in (irrigation, optimizer, scenario, selftest, treeshape):
    _mod.irrigation_cost = _recorded_irrigation_cost


def lower_bound_line() -> tuple[bool, str]:
    n, worst = IRRIGATION_CALLS["calls"], IRRIGATION_CALLS["worst"]
    ok = n > 0 and worst <= 1e-6
    return ok, (f"CRITERION 5 (session): {'PASS' if ok else 'FAIL'} lower bound over "
                f"{n} irrigation calls, worst relative excess {worst:.2e}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_sessionfinish(session, exitstatus):
    # the lower bound must hold for every call, including those made after
    # the acceptance module ran
    if IRRIGATION_CALLS["calls"] and not lower_bound_line()[0]:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    lines = list(ACCEPTANCE_LINES)
    if IRRIGATION_CALLS["calls"]:
        lines.append(lower_bound_line()[1])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
