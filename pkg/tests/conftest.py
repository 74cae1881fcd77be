import pytest

from pdwalk.basin import GridSpec, compute_basin, trace_domain_boundary
from pdwalk.integrator import IntegratorConfig
from pdwalk.model import WalkerParams

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def cfg():
    return IntegratorConfig()


@pytest.fixture(scope="session")
def walker():
    return WalkerParams(0.011)


@pytest.fixture(scope="session")
def basin_500(walker, cfg):
    """Basin raster on the default window at 500 x 500, shared by several modules."""
    return compute_basin(walker, GridSpec(), cfg)


@pytest.fixture(scope="session")
def boundary_curves(walker, cfg):
    return trace_domain_boundary(walker, cfg)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
