import pytest

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line; the test still asserts on ``passed``."""

    def _report(number, name, passed, detail, seconds):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail} ({seconds:.1f} s)"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
