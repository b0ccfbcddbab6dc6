import warnings

import pytest

ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    """Record a one-line pass/fail summary for the terminal report."""

    def _add(label: str, result) -> None:
        line = f"{label} {result.line()}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        for key, value in result.metrics.items():
            print(f"    {key}: {value}")

    return _add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_overflow():
    # exp/expm1 of very negative or very large log weights is expected in the degenerate low-rank regime
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", category=RuntimeWarning, message="overflow")
        warnings.filterwarnings("ignore", category=RuntimeWarning, message="underflow")
        yield
