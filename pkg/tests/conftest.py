"""Shared fixtures: attractor models are expensive enough to build once per session."""
import pytest

from fractalbem import library
from fractalbem.ifs import AttractorModel


@pytest.fixture(scope="session")
def models():
    """Every library attractor as an :class:`AttractorModel`, keyed by name."""
    return {name: AttractorModel.from_ifs(make()) for name, make in library.LIBRARY.items()}


@pytest.fixture(scope="session")
def square(models):
    return models["unit_square"]


@pytest.fixture(scope="session")
def koch(models):
    return models["koch_snowflake"]


@pytest.fixture(scope="session")
def alpha(models):
    return models["alpha_family"]


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run
# ---------------------------------------------------------------------------
_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``acceptance(number, passed, detail)`` records the verdict line of one criterion."""
    def record(number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
