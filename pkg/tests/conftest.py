import pytest

acceptance_lines = []


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion and assert it."""

    def record(num, name, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        line = f"criterion {num:2d} {name}: {status}{suffix}"
        acceptance_lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
