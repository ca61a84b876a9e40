import numpy as np
import pytest

from crystaljunction.bloch import solve_bands
from crystaljunction.media import Layer, Medium

STACK_A_LAYERS = (Layer(1.0, eps=1.0), Layer(0.5, eps=4.0))
STACK_A_PERIOD = 1.5
# roots of 1 - (9/4) sin^2(lam) = -1
EDGE_LOW = float(np.arcsin(2 * np.sqrt(2) / 3))
EDGE_HIGH = float(np.pi - np.arcsin(2 * np.sqrt(2) / 3))


def stack_a() -> Medium:
    return Medium.layered(STACK_A_LAYERS, name="stack-a")


def first_band(k):
    """Closed-form first positive band of STACK-A: 1 - (9/4) sin^2(lam) = cos(k p)."""
    c = np.cos(np.asarray(k) * STACK_A_PERIOD)
    return np.arcsin(np.sqrt((1.0 - c) * 4.0 / 9.0))


@pytest.fixture(scope="session")
def medium_a():
    return stack_a()


@pytest.fixture(scope="session")
def identity():
    return Medium.homogeneous(1.0, 1.0, 0j, 1.0, name="identity")


@pytest.fixture(scope="session")
def bands_a(medium_a):
    return solve_bands(medium_a, N=64, n_bands=8)


@pytest.fixture(scope="session")
def bands_a_small(medium_a):
    return solve_bands(medium_a, N=32, n_bands=6)


@pytest.fixture(scope="session")
def bands_identity(identity):
    return solve_bands(identity, N=32, n_bands=8)


# acceptance reporting: one line per criterion-marked test in the terminal summary
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    ok = rep.passed and _CRITERIA.get(number, (None, True, ""))[1]
    _CRITERIA[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d} {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
