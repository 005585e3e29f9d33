"""Shared test plumbing: the acceptance-criterion registry.

Acceptance tests wrap their body in the ``criterion`` context manager so
every criterion reports one PASS/FAIL line. The lines print immediately
(visible with ``-s`` or on failure) and are replayed in the terminal
summary, which survives pytest's output capture.
"""

import contextlib

import pytest

_CRITERIA: dict[int, tuple[str, bool]] = {}
_TOTAL = 12


@pytest.fixture
def criterion():
    @contextlib.contextmanager
    def _record(number: int, name: str):
        try:
            yield
        except BaseException:
            _CRITERIA[number] = (name, False)
            print(f"criterion {number:02d} {name}: FAIL")
            raise
        _CRITERIA[number] = (name, True)
        print(f"criterion {number:02d} {name}: PASS")

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, _TOTAL + 1):
        if number in _CRITERIA:
            name, ok = _CRITERIA[number]
            status = "PASS" if ok else "FAIL"
            terminalreporter.write_line(f"criterion {number:02d} {name}: {status}")
        else:
            terminalreporter.write_line(f"criterion {number:02d}: NOT RUN")
