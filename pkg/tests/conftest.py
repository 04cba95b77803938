import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion; printed at the end of the run."""
    def record(number, ok, detail=""):
        _VERDICTS.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
