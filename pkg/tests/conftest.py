import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from subharnack.geometry import ModelSpace

settings.register_profile(
    "default",
    max_examples=20,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def torus16():
    return ModelSpace.torus(16)


@pytest.fixture(scope="session")
def nil16():
    return ModelSpace.heisenberg(16, 16, 32)


@pytest.fixture(scope="session", params=["torus", "heisenberg"])
def small_space(request):
    if request.param == "torus":
        return ModelSpace.torus(16)
    return ModelSpace.heisenberg(16, 16, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def observed_order(errors, levels):
    """Least-squares slope of log(error) against log(1/n)."""
    x = -np.log(np.asarray(levels, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        items = mod.RESULTS[n]
        ok = all(p for _, p, _ in items)
        failed = [label for label, p, _ in items if not p]
        tail = f"{len(items)} checks" + (f"; failing: {', '.join(failed)}" if failed else "")
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {tail}")
    for n in sorted(mod.RESULTS):
        for label, p, detail in mod.RESULTS[n]:
            terminalreporter.write_line(f"    [{n}] {'pass' if p else 'FAIL'} {label}: {detail}")
