from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from reverb.harness import PROGRAMS_DIR, load_fixture

settings.register_profile(
    "repo", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def ex1():
    return load_fixture("example1")


@pytest.fixture(scope="session")
def ex2():
    return load_fixture("example2")


@pytest.fixture(scope="session")
def ex3():
    return load_fixture("example3")


@pytest.fixture(scope="session")
def ex1_script() -> str:
    return (PROGRAMS_DIR / "example1.script").read_text()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
