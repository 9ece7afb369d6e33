import pytest

from abblab.nonlinearity import Nonlinearity, majority_rule

ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}"
    if detail:
        line += f" :: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def maj3():
    return majority_rule({3: 1.0})


@pytest.fixture(scope="session")
def F3(maj3):
    return Nonlinearity(maj3)


@pytest.fixture(scope="session")
def identity_rule():
    return majority_rule({1: 1.0})
