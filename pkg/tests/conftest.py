import re

import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion, then assert it.

    The criterion number comes from the test name (``test_criterion_<n>_...``).
    A test that errors before reaching its verdict is recorded as a failure.
    """
    number = re.match(r"test_criterion_(\d+)", request.node.name).group(1)
    lines = request.config.stash.setdefault(_LINES, [])
    state = {"done": False}

    def record(passed: bool | None, detail: str) -> None:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        line = f"criterion {number}: {status}  {detail}"
        print(line)
        lines.append(line)
        state["done"] = True
        if passed is None:
            pytest.skip(detail)
        assert passed, line

    yield record
    if not state["done"]:
        lines.append(f"criterion {number}: FAIL  (raised before reaching a verdict)")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
