import warnings

import numpy as np
import pytest

from rstensor import GridSpec, KernelSpec, build_reference_kernel, grid_quadrature


@pytest.fixture(scope="session")
def newton_ref_64():
    """Newton kernel on the doubled grid of n=64, b=8."""
    grid = GridSpec(64, 8.0)
    rule = grid_quadrature(KernelSpec(), grid, eps=1e-8)
    return build_reference_kernel(grid.double(), rule)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


# one summary line per acceptance criterion
_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA[name] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        status, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{status}  {name}  {detail}")
